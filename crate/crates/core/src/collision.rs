//! Repeated-interaction layer: impulsive Jaynes-Cummings Kraus maps and the
//! renewal statistics of atomic arrivals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::error::{Error, Result};
use crate::fock::{diag_number_function, ladder_operators, sin_sqrt_over_sqrt, FockOperator, Superoperator, TruncationConfig, C64};

/// Diagonal state `p |e><e| + (1 - p) |g><g|` of an incoming atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncillaState {
    p: f64,
}

impl AncillaState {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Inverse beam temperature in units of the transition energy:
    /// `ln((1 - p) / p)`. Negative for inverted beams, infinite at `p = 0`
    /// and `p = 1`.
    pub fn beta(&self) -> f64 {
        match self.p {
            0.0 => f64::INFINITY,
            1.0 => f64::NEG_INFINITY,
            p => ((1.0 - p) / p).ln(),
        }
    }
}

/// Outcome of one atom crossing the cavity, named `<out><in>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicBranch {
    /// Excited in, excited out.
    ExcitedExcited,
    /// Excited in, ground out: one photon deposited.
    GroundExcited,
    /// Ground in, ground out.
    GroundGround,
    /// Ground in, excited out: one photon absorbed.
    ExcitedGround,
}

impl AtomicBranch {
    pub const ALL: [AtomicBranch; 4] = [
        AtomicBranch::ExcitedExcited,
        AtomicBranch::GroundExcited,
        AtomicBranch::GroundGround,
        AtomicBranch::ExcitedGround,
    ];

    pub fn delta_photons(self) -> i64 {
        match self {
            AtomicBranch::GroundExcited => 1,
            AtomicBranch::ExcitedGround => -1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    pub l_ee: FockOperator,
    pub l_ge: FockOperator,
    pub l_gg: FockOperator,
    pub l_eg: FockOperator,
    pub theta: f64,
    pub p: f64,
}

impl KrausSet {
    pub fn operator(&self, branch: AtomicBranch) -> &FockOperator {
        match branch {
            AtomicBranch::ExcitedExcited => &self.l_ee,
            AtomicBranch::GroundExcited => &self.l_ge,
            AtomicBranch::GroundGround => &self.l_gg,
            AtomicBranch::ExcitedGround => &self.l_eg,
        }
    }

    /// `sum L^dag L - I`, excluding the boundary level `n_max`.
    pub fn completeness_defect(&self) -> f64 {
        let d = self.l_ee.dim();
        let mut sum = FockOperator::zeros(d);
        for b in AtomicBranch::ALL {
            let l = self.operator(b);
            sum = sum.add(&l.adjoint().compose(l));
        }
        let defect = sum.add(&FockOperator::identity(d).scale(-1.0));
        let mut worst: f64 = 0.0;
        for j in 0..d - 1 {
            for i in 0..d - 1 {
                worst = worst.max(defect.get(i, j).norm());
            }
        }
        worst
    }

    /// The four-operator channel `rho -> sum L rho L^dag`.
    pub fn channel(&self) -> Superoperator {
        let d = self.l_ee.dim();
        AtomicBranch::ALL.iter().fold(Superoperator::zero(d), |acc, &b| {
            let l = self.operator(b);
            acc.add(&Superoperator::sandwich(l, &l.adjoint()).expect("matching dims"))
        })
    }
}

/// Impulsive resonant Jaynes-Cummings Kraus operators for vacuum Rabi angle
/// `theta` and excited-state probability `p`.
pub fn kraus_operators(theta: f64, p: f64, trunc: TruncationConfig) -> Result<KrausSet> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must be finite and >= 0, got {theta}")));
    }
    AncillaState::new(p)?;
    let (a, a_dag, _) = ladder_operators(trunc);
    let sp = p.sqrt();
    let sq = (1.0 - p).sqrt();
    let cos_np1 = diag_number_function(|n| (theta * ((n + 1) as f64).sqrt()).cos(), trunc)?;
    let cos_n = diag_number_function(|n| (theta * (n as f64).sqrt()).cos(), trunc)?;
    let sinc_n = diag_number_function(|n| sin_sqrt_over_sqrt(theta, n), trunc)?;
    let sinc_np1 = diag_number_function(|n| sin_sqrt_over_sqrt(theta, n + 1), trunc)?;
    Ok(KrausSet {
        l_ee: cos_np1.scale(sp),
        l_ge: sinc_n.compose(&a_dag).scale(sp),
        l_gg: cos_n.scale(sq),
        l_eg: sinc_np1.compose(&a).scale(sq),
        theta,
        p,
    })
}

/// The collision generator `F_a = sum_mn D[L_mn]`. On levels below `n_max`,
/// `1 + F_a` is the Kraus channel; written in Lindblad form it annihilates
/// the trace on the whole truncated space.
pub fn ancilla_map(ks: &KrausSet) -> Superoperator {
    let d = ks.l_ee.dim();
    AtomicBranch::ALL.iter().fold(Superoperator::zero(d), |acc, &b| {
        acc.add(&Superoperator::dissipator(ks.operator(b)).expect("matching dims"))
    })
}

/// Piecewise-linear density on a grid starting at zero, normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    tau: Vec<f64>,
    w: Vec<f64>,
    /// `int_0^tau_k w` at the nodes.
    cdf: Vec<f64>,
    /// `int_0^tau_k s w(s) ds` at the nodes.
    first_moment: Vec<f64>,
    /// Fritsch-Carlson slopes of the monotone cubic CDF interpolant.
    cdf_slopes: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(tau: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if tau.len() != w.len() || tau.len() < 2 {
            return Err(Error::InvalidParameter(
                "tabulated density needs matching tau and w arrays of length >= 2".into(),
            ));
        }
        if tau[0] != 0.0 {
            return Err(Error::InvalidParameter("tabulated density must start at tau = 0".into()));
        }
        if tau.windows(2).any(|p| !(p[1] > p[0])) || tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("tau grid must be finite and strictly increasing".into()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("density values must be finite and nonnegative".into()));
        }
        let mass: f64 = tau
            .windows(2)
            .zip(w.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "tabulated density integrates to {mass}, expected 1 within 1e-6"
            )));
        }
        let w: Vec<f64> = w.iter().map(|v| v / mass).collect();
        let mut cdf = vec![0.0; tau.len()];
        let mut first_moment = vec![0.0; tau.len()];
        for k in 1..tau.len() {
            let (a, b) = (tau[k - 1], tau[k]);
            cdf[k] = cdf[k - 1] + 0.5 * (b - a) * (w[k - 1] + w[k]);
            // s * w(s) is quadratic on the segment: Simpson is exact.
            let mid = 0.5 * (a + b);
            let wm = 0.5 * (w[k - 1] + w[k]);
            first_moment[k] = first_moment[k - 1] + (b - a) / 6.0 * (a * w[k - 1] + 4.0 * mid * wm + b * w[k]);
        }
        let cdf_slopes = pchip_slopes(&tau, &cdf);
        Ok(Self { tau, w, cdf, first_moment, cdf_slopes })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    fn support_end(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.tau.partition_point(|&x| x <= t) {
            0 => 0,
            k => (k - 1).min(self.tau.len() - 2),
        }
    }

    fn density(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.support_end() {
            return 0.0;
        }
        let k = self.segment(t);
        let (a, b) = (self.tau[k], self.tau[k + 1]);
        let s = (t - a) / (b - a);
        self.w[k] * (1.0 - s) + self.w[k + 1] * s
    }

    /// `(int_0^t w, int_0^t s w(s) ds)`, exact for the piecewise-linear density.
    fn moments_to(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        if t >= self.support_end() {
            return (*self.cdf.last().unwrap(), *self.first_moment.last().unwrap());
        }
        let k = self.segment(t);
        let a = self.tau[k];
        let (wa, wt) = (self.w[k], self.density(t));
        let m0 = self.cdf[k] + 0.5 * (t - a) * (wa + wt);
        let mid = 0.5 * (a + t);
        let m1 = self.first_moment[k] + (t - a) / 6.0 * (a * wa + 4.0 * mid * 0.5 * (wa + wt) + t * wt);
        (m0, m1)
    }

    /// `(int_a^{a+h} w, int_a^{a+h} (s - a) w(s) ds)`.
    fn segment_moments(&self, a: f64, h: f64) -> (f64, f64) {
        let b = a + h;
        let end = self.support_end();
        if a >= end {
            return (0.0, 0.0);
        }
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        let mut lo = a;
        while lo < b && lo < end {
            let k = self.segment(lo);
            let hi = self.tau[k + 1].min(b);
            if hi <= lo {
                break;
            }
            let (wl, wh) = (self.density(lo), self.density(hi));
            let wm = 0.5 * (wl + wh);
            let mid = 0.5 * (lo + hi);
            m0 += 0.5 * (hi - lo) * (wl + wh);
            m1 += (hi - lo) / 6.0 * ((lo - a) * wl + 4.0 * (mid - a) * wm + (hi - a) * wh);
            lo = hi;
        }
        (m0, m1)
    }

    fn cdf_interpolant(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.support_end() {
            return *self.cdf.last().unwrap();
        }
        let k = self.segment(t);
        hermite(
            self.tau[k],
            self.tau[k + 1],
            self.cdf[k],
            self.cdf[k + 1],
            self.cdf_slopes[k],
            self.cdf_slopes[k + 1],
            t,
        )
    }

    /// Inverse CDF by bisection on the monotone cubic interpolant.
    fn quantile(&self, u: f64) -> f64 {
        let total = *self.cdf.last().unwrap();
        let u = u * total;
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.tau.len() - 1) - 1;
        let (mut lo, mut hi) = (self.tau[k], self.tau[k + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf_interpolant(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn laplace(&self, s: C64) -> C64 {
        // Four-point Gauss-Legendre on each tabulated segment.
        const X: [f64; 4] = [-0.861_136_311_594_053, -0.339_981_043_584_856, 0.339_981_043_584_856, 0.861_136_311_594_053];
        const W: [f64; 4] = [0.347_854_845_137_454, 0.652_145_154_862_546, 0.652_145_154_862_546, 0.347_854_845_137_454];
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..self.tau.len() - 1 {
            let (a, b) = (self.tau[k], self.tau[k + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wq) in X.iter().zip(W) {
                let t = mid + half * x;
                acc += (-s * t).exp() * (wq * half * self.density(t));
            }
        }
        acc
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let (h0, h1) = (x[k] - x[k - 1], x[k + 1] - x[k]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    m
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * m1
}

/// Density of the gap between successive atomic arrivals.
#[derive(Debug, Clone, PartialEq)]
pub enum WaitingTimeDistribution {
    Exponential { rate: f64 },
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    Tabulated(TabulatedDensity),
}

impl WaitingTimeDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("arrival rate must be positive, got {rate}")));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(Error::InvalidParameter("hyperexponential needs matching, nonempty weights and rates".into()));
        }
        if weights.iter().any(|c| !(*c > 0.0 && c.is_finite())) || rates.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("hyperexponential weights and rates must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("hyperexponential weights sum to {total}, expected 1")));
        }
        Ok(Self::Hyperexponential { weights, rates })
    }

    pub fn tabulated(tau: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        Ok(Self::Tabulated(TabulatedDensity::new(tau, w)?))
    }

    fn components(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Exponential { rate } => Some(vec![(1.0, *rate)]),
            Self::Hyperexponential { weights, rates } => Some(weights.iter().copied().zip(rates.iter().copied()).collect()),
            Self::Tabulated(_) => None,
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Tabulated(tab) => tab.density(t),
            _ => self.components().unwrap().iter().map(|(c, l)| c * l * (-l * t).exp()).sum(),
        }
    }

    /// `int_0^t w`.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            Self::Tabulated(tab) => tab.moments_to(t).0,
            _ => self.components().unwrap().iter().map(|(c, l)| -c * (-l * t.max(0.0)).exp_m1()).sum(),
        }
    }

    /// `1 - int_0^t w`.
    pub fn survival(&self, t: f64) -> f64 {
        match self {
            Self::Tabulated(tab) => (1.0 - tab.moments_to(t).0).max(0.0),
            _ => self.components().unwrap().iter().map(|(c, l)| c * (-l * t.max(0.0)).exp()).sum(),
        }
    }

    /// `int_0^t s w(s) ds`.
    pub fn first_moment_to(&self, t: f64) -> f64 {
        match self {
            Self::Tabulated(tab) => tab.moments_to(t).1,
            _ => {
                let t = t.max(0.0);
                self.components()
                    .unwrap()
                    .iter()
                    .map(|(c, l)| {
                        let x = l * t;
                        c / l * (-(-x).exp_m1() - x * (-x).exp())
                    })
                    .sum()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Tabulated(tab) => *tab.first_moment.last().unwrap(),
            _ => self.components().unwrap().iter().map(|(c, l)| c / l).sum(),
        }
    }

    /// Mean arrival rate `R = 1 / mean gap`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    /// Fastest time scale of the density, used to bound quadrature steps.
    pub fn max_rate(&self) -> f64 {
        match self {
            Self::Exponential { rate } => *rate,
            Self::Hyperexponential { rates, .. } => rates.iter().copied().fold(0.0, f64::max),
            Self::Tabulated(tab) => tab.w.iter().copied().fold(0.0, f64::max),
        }
    }

    /// `(int_a^{a+h} w, int_a^{a+h} (s - a) w(s) ds)`.
    pub fn segment_moments(&self, a: f64, h: f64) -> (f64, f64) {
        match self {
            Self::Tabulated(tab) => tab.segment_moments(a, h),
            _ => self.components().unwrap().iter().fold((0.0, 0.0), |(m0, m1), (c, l)| {
                let x = l * h;
                let base = c * (-l * a).exp();
                let one_minus = -(-x).exp_m1();
                (m0 + base * one_minus, m1 + base / l * (one_minus - x * (-x).exp()))
            }),
        }
    }

    /// Laplace transform `w~(s)`.
    pub fn laplace(&self, s: C64) -> C64 {
        match self {
            Self::Tabulated(tab) => tab.laplace(s),
            _ => self.components().unwrap().iter().map(|(c, l)| (c * l) / (s + l)).sum(),
        }
    }

    /// Laplace transform of the renewal density, `g~(s) = w~ / (R (1 - w~))`.
    pub fn renewal_laplace(&self, s: C64) -> C64 {
        if let Self::Exponential { .. } = self {
            return 1.0 / s;
        }
        let w = self.laplace(s);
        w / ((1.0 - w) * self.rate())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Tabulated(tab) => tab.quantile(rng.random::<f64>()),
            _ => {
                let comps = self.components().unwrap();
                let rate = pick_component(&comps, rng);
                rng.sample(Exp::new(rate).expect("positive rate"))
            }
        }
    }

    /// Draws from the residual-time density `R * survival(t)`: the first
    /// arrival after an arbitrary origin of a stationary arrival stream.
    pub fn sample_residual<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Tabulated(tab) => {
                let r = self.rate();
                let u = rng.random::<f64>();
                let (mut lo, mut hi) = (0.0, tab.support_end());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if 1.0 - no_arrival_probability(self, r, mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            _ => {
                // Residual of a mixture of exponentials: weights c_i R / lambda_i.
                let r = self.rate();
                let comps: Vec<(f64, f64)> = self.components().unwrap().iter().map(|(c, l)| (c * r / l, *l)).collect();
                let rate = pick_component(&comps, rng);
                rng.sample(Exp::new(rate).expect("positive rate"))
            }
        }
    }
}

fn pick_component<R: Rng + ?Sized>(comps: &[(f64, f64)], rng: &mut R) -> f64 {
    if comps.len() == 1 {
        return comps[0].1;
    }
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (c, l) in comps {
        acc += c;
        if u < acc {
            return *l;
        }
    }
    comps.last().unwrap().1
}

/// `p0(t) = 1 - R int_0^t survival = 1 - R (t survival(t) + int_0^t s w(s) ds)`.
fn no_arrival_probability(wtd: &WaitingTimeDistribution, rate: f64, t: f64) -> f64 {
    if let Some(comps) = wtd.components() {
        // Closed form avoids cancellation at large t.
        return comps.iter().map(|(c, l)| rate * c / l * (-l * t).exp()).sum();
    }
    (1.0 - rate * (t * wtd.survival(t) + wtd.first_moment_to(t))).clamp(0.0, 1.0)
}

/// Where the first gap of an arrival sequence is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalConvention {
    /// First arrival from the residual-time density: the stream has been
    /// running since the infinite past.
    Stationary,
    /// First arrival from the waiting-time density: the origin sits just
    /// after a collision.
    FirstJumpW,
}

/// Arrival statistics of the atomic beam.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalProcess {
    wtd: WaitingTimeDistribution,
    rate: f64,
}

impl RenewalProcess {
    pub fn new(wtd: WaitingTimeDistribution) -> Self {
        let rate = wtd.rate();
        Self { wtd, rate }
    }

    pub fn wtd(&self) -> &WaitingTimeDistribution {
        &self.wtd
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `p_f(t)`: no collision within `t` after a collision.
    pub fn survival(&self, t: f64) -> f64 {
        self.wtd.survival(t)
    }

    /// `p_1(t) = R p_f(t)`: density of the first arrival after the origin.
    pub fn residual_density(&self, t: f64) -> f64 {
        self.rate * self.wtd.survival(t)
    }

    /// `p_0(t)`: no collision in `(0, t)`.
    pub fn no_arrival(&self, t: f64) -> f64 {
        no_arrival_probability(&self.wtd, self.rate, t)
    }

    pub fn sample_arrivals<R: Rng + ?Sized>(&self, horizon: f64, convention: ArrivalConvention, rng: &mut R) -> Vec<f64> {
        let mut times = Vec::new();
        let mut t = match convention {
            ArrivalConvention::Stationary => positive(|| self.wtd.sample_residual(rng)),
            ArrivalConvention::FirstJumpW => positive(|| self.wtd.sample(rng)),
        };
        while t < horizon {
            times.push(t);
            let next = t + positive(|| self.wtd.sample(rng));
            if next <= t {
                break;
            }
            t = next;
        }
        times
    }
}

fn positive(mut draw: impl FnMut() -> f64) -> f64 {
    loop {
        let x = draw();
        if x > 0.0 {
            return x;
        }
    }
}

/// Strictly increasing arrival times in `(0, horizon)`, reproducible per seed.
pub fn sample_arrival_times(rp: &RenewalProcess, horizon: f64, rng_seed: u64, convention: ArrivalConvention) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(rp.sample_arrivals(horizon, convention, &mut rng))
}

/// A uniform grid `0, step, 2 step, ...` with `points` entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub step: f64,
    pub points: usize,
}

impl UniformGrid {
    pub fn new(t_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && t_max > 0.0) {
            return Err(Error::Grid("t_max and step must be positive".into()));
        }
        let points = (t_max / step).round() as usize + 1;
        Ok(Self { step, points })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points).map(|k| k as f64 * self.step).collect()
    }
}

/// Normalized renewal density `g(t)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalDensity {
    pub grid: UniformGrid,
    pub g: Vec<f64>,
}

/// Solves `R g(t) = w(t) + R int_0^t w(s) g(t - s) ds` by product
/// integration: `g` is interpolated linearly between grid points and the
/// resulting weights are integrated exactly against `w`.
pub fn renewal_density(wtd: &WaitingTimeDistribution, grid: UniformGrid) -> Result<RenewalDensity> {
    let limit = 1.0 / (20.0 * wtd.max_rate());
    if grid.step > limit {
        return Err(Error::CoarseStep { step: grid.step, limit });
    }
    if grid.points < 2 {
        return Err(Error::Grid("renewal density needs at least two grid points".into()));
    }
    let n = grid.points;
    let h = grid.step;
    // h(t) = R g(t) solves h = w + w * h.
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for j in 0..n {
        let (m0, m1) = wtd.segment_moments(j as f64 * h, h);
        a.push(m0 - m1 / h);
        b.push(m1 / h);
    }
    let w: Vec<f64> = (0..n).map(|k| wtd.density(k as f64 * h)).collect();
    let mut hv = vec![0.0; n];
    hv[0] = w[0];
    for k in 1..n {
        let mut acc = w[k];
        for j in 1..k {
            acc += a[j] * hv[k - j];
        }
        for j in 0..k {
            acc += b[j] * hv[k - j - 1];
        }
        hv[k] = acc / (1.0 - a[0]);
    }
    let rate = wtd.rate();
    Ok(RenewalDensity {
        grid,
        g: hv.into_iter().map(|x| x / rate).collect(),
    })
}

/// Super-bunched waiting-time density whose renewal density is
/// `g(t) = A exp(-Gamma t) + 1` at mean rate `R`.
///
/// Inverting `R g~ = w~ / (1 - w~)` gives
/// `w~(s) = R ((A + 1) s + Gamma) / (s^2 + s (Gamma + R (A + 1)) + R Gamma)`,
/// a two-exponential mixture with rates at the (real, negative) poles.
pub fn hyperexp_from_superbunched(amplitude: f64, gamma: f64, rate: f64) -> Result<WaitingTimeDistribution> {
    for (name, v) in [("A", amplitude), ("Gamma", gamma), ("R", rate)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let b = gamma + rate * (amplitude + 1.0);
    let c = rate * gamma;
    let disc = b * b - 4.0 * c;
    let q = 0.5 * (b + disc.sqrt());
    let (fast, slow) = (q, c / q);
    let numerator = |s: f64| rate * ((amplitude + 1.0) * s + gamma);
    // Residues of w~ at s = -lambda_i equal c_i lambda_i.
    let c_slow = numerator(-slow) / ((fast - slow) * slow);
    let c_fast = numerator(-fast) / ((slow - fast) * fast);
    let total = c_slow + c_fast;
    WaitingTimeDistribution::hyperexponential(vec![c_slow / total, c_fast / total], vec![slow, fast])
}

/// `p0`, `p1` and `pf` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSurvival {
    pub t: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub pf: Vec<f64>,
}

pub fn residual_and_survival(rp: &RenewalProcess, t_grid: &[f64]) -> Result<ResidualSurvival> {
    if t_grid.len() < 2 {
        return Err(Error::Grid("residual/survival grid needs at least two points".into()));
    }
    if t_grid[0] != 0.0 || t_grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Grid("grid must start at 0 and increase strictly".into()));
    }
    Ok(ResidualSurvival {
        t: t_grid.to_vec(),
        p0: t_grid.iter().map(|&t| rp.no_arrival(t)).collect(),
        p1: t_grid.iter().map(|&t| rp.residual_density(t)).collect(),
        pf: t_grid.iter().map(|&t| rp.survival(t)).collect(),
    })
}
