//! Micromaser generators, steady states and Markovian evolution.

use crate::collision::{ancilla_map, kraus_operators, KrausSet, WaitingTimeDistribution};
use crate::error::{Error, Result};
use crate::fock::{
    ladder_operators, sin_sqrt_over_sqrt, steady_state_nullspace, DensityMatrix, Propagator,
    Superoperator, TruncationConfig, C64,
};
use crate::trajectory::build_channels;

/// Physical parameters of a single-mode cavity pumped by a two-level beam.
///
/// `omega` is the mode frequency, `gamma` the cavity decay rate, `nbar` the
/// thermal occupation of the cavity bath, `rate` the mean atomic arrival
/// rate, `p` the excited-state probability of incoming atoms and `theta`
/// the vacuum Rabi angle accumulated during one transit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicromaserParams {
    pub omega: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub rate: f64,
    pub p: f64,
    pub theta: f64,
    pub trunc: TruncationConfig,
}

impl MicromaserParams {
    pub fn new(omega: f64, gamma: f64, nbar: f64, rate: f64, p: f64, theta: f64, trunc: TruncationConfig) -> Result<Self> {
        let params = Self { omega, gamma, nbar, rate, p, theta, trunc };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::InvalidParameter(format!("{name} = {v} is out of range"));
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(bad("omega", self.omega));
        }
        for (name, v) in [("gamma", self.gamma), ("nbar", self.nbar), ("rate", self.rate), ("theta", self.theta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, v));
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(bad("p", self.p));
        }
        if self.gamma == 0.0 && self.rate == 0.0 {
            return Err(Error::InvalidParameter("at least one of gamma and rate must be positive".into()));
        }
        Ok(())
    }

    pub fn with_trunc(mut self, trunc: TruncationConfig) -> Self {
        self.trunc = trunc;
        self
    }

    pub fn dim(&self) -> usize {
        self.trunc.dim()
    }

    /// Inverse beam temperature `ln((1 - p) / p) / omega`; `+-inf` at `p = 0, 1`.
    pub fn beta_a(&self) -> f64 {
        crate::collision::AncillaState::new(self.p).map(|a| a.beta()).unwrap_or(f64::NAN) / self.omega
    }

    /// Inverse cavity-bath temperature `ln((nbar + 1) / nbar) / omega`; `+inf` at `nbar = 0`.
    pub fn beta_c(&self) -> f64 {
        if self.nbar == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / self.nbar).ln_1p() / self.omega
        }
    }

    pub fn kraus(&self) -> Result<KrausSet> {
        kraus_operators(self.theta, self.p, self.trunc)
    }
}

/// `-i omega [N, .] + (nbar + 1) gamma D[a] + nbar gamma D[a^dag]`.
pub fn cavity_liouvillian(params: &MicromaserParams) -> Result<Superoperator> {
    params.validate()?;
    let (a, a_dag, n) = ladder_operators(params.trunc);
    Ok(Superoperator::hamiltonian(&n.scale(params.omega))?
        .add(&Superoperator::dissipator(&a)?.scale((params.nbar + 1.0) * params.gamma))
        .add(&Superoperator::dissipator(&a_dag)?.scale(params.nbar * params.gamma)))
}

/// `-i omega [N, .] + sum_i D[C_i] + D[D_i]` over the six labelled jump channels.
pub fn full_liouvillian(params: &MicromaserParams) -> Result<Superoperator> {
    params.validate()?;
    let (_, _, n) = ladder_operators(params.trunc);
    let channels = build_channels(params)?;
    let mut gen = Superoperator::hamiltonian(&n.scale(params.omega))?;
    for ch in channels.iter() {
        gen = gen.add(&Superoperator::dissipator(&ch.op)?);
    }
    Ok(gen)
}

/// Cavity terms plus a thermal beam with gain rate `p theta^2 R` on `a^dag`
/// and loss rate `(1 - p) theta^2 R` on `a`.
pub fn weak_coupling_generator(params: &MicromaserParams) -> Result<Superoperator> {
    let (a, a_dag, _) = ladder_operators(params.trunc);
    let strength = params.theta * params.theta * params.rate;
    Ok(cavity_liouvillian(params)?
        .add(&Superoperator::dissipator(&a_dag)?.scale(params.p * strength))
        .add(&Superoperator::dissipator(&a)?.scale((1.0 - params.p) * strength)))
}

/// Unnormalized `ln P(n) - ln P(0)` for `n = 0..=n_max` from the detailed-balance
/// product of gain over loss on each rung.
fn log_ladder(params: &MicromaserParams, n_max: usize) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(n_max + 1);
    logs.push(0.0);
    for m in 1..=n_max {
        let s2 = sin_sqrt_over_sqrt(params.theta, m).powi(2);
        let gain = params.p * params.rate * s2 + params.gamma * params.nbar;
        let loss = (1.0 - params.p) * params.rate * s2 + params.gamma * (params.nbar + 1.0);
        if !(loss > 0.0) {
            return Err(Error::VanishingDenominator(m));
        }
        let prev = logs[m - 1];
        logs.push(prev + gain.ln() - loss.ln());
    }
    Ok(logs)
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Closed-form steady-state photon distribution under Poissonian pumping.
pub fn steady_state_analytic(params: &MicromaserParams) -> Result<DensityMatrix> {
    params.validate()?;
    let pops = normalize_logs(&log_ladder(params, params.trunc.n_max())?);
    let rho = DensityMatrix::from_populations(&pops)?;
    params.trunc.check_tail(&rho)?;
    Ok(rho)
}

/// Smallest `n_max >= 2` for which the closed-form steady state puts less
/// than `tail_tol` both on level `n_max` and beyond it. `params.trunc` is
/// ignored. Searches up to `limit`.
pub fn suggest_n_max(params: &MicromaserParams, tail_tol: f64, limit: usize) -> Result<usize> {
    params.validate()?;
    let pops = normalize_logs(&log_ladder(params, limit)?);
    let mut beyond = vec![0.0; limit + 2];
    for n in (0..=limit).rev() {
        beyond[n] = beyond[n + 1] + pops[n];
    }
    (2..limit)
        .find(|&n| pops[n] < tail_tol && beyond[n + 1] < tail_tol)
        .ok_or(Error::TailViolation {
            n_max: limit,
            mass: pops[limit],
            tail_tol,
        })
}

/// Super-bunched steady state `(rho_A + A rho_eq) / (1 + A)`, where `rho_A` is
/// stationary under Poissonian pumping at rate `A R` and `rho_eq` is the
/// cavity equilibrium.
pub fn superbunched_steady_state(params: &MicromaserParams, amplitude: f64) -> Result<DensityMatrix> {
    superbunched_mixture(params, amplitude, amplitude * params.rate)
}

/// Exact small-`Gamma` limit of the renewal steady state for
/// `g(t) = A exp(-Gamma t) + 1`. Within a burst the arrivals come at rate
/// `(1 + A) R`, so the bunched component is pumped at that rate; the
/// weights are as in [`superbunched_steady_state`].
pub fn superbunched_limit_steady_state(params: &MicromaserParams, amplitude: f64) -> Result<DensityMatrix> {
    superbunched_mixture(params, amplitude, (1.0 + amplitude) * params.rate)
}

fn superbunched_mixture(params: &MicromaserParams, amplitude: f64, burst_rate: f64) -> Result<DensityMatrix> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!("A must be positive, got {amplitude}")));
    }
    params.validate()?;
    let cavity = cavity_liouvillian(params)?;
    let fa = ancilla_map(&params.kraus()?);
    let rho_burst = steady_state_nullspace(&cavity.add(&fa.scale(burst_rate)))?;
    let rho_eq = steady_state_nullspace(&cavity)?;
    let w = 1.0 / (1.0 + amplitude);
    DensityMatrix::mix(&[(w, &rho_burst), (amplitude * w, &rho_eq)])
}

/// Samples of the Laplace-domain memory kernel.
#[derive(Debug, Clone)]
pub struct MemoryKernelEval {
    pub s_grid: Vec<C64>,
    pub kernel_values: Vec<Superoperator>,
}

/// `K~(s) = (1 - (g~(s) - 1/s) R F_a)^-1`. The arrival rate is taken from
/// `wtd` and must agree with `params.rate`.
pub fn memory_kernel_laplace(params: &MicromaserParams, wtd: &WaitingTimeDistribution, s: C64) -> Result<Superoperator> {
    params.validate()?;
    if !(s.re > 0.0) {
        return Err(Error::InvalidParameter(format!("Laplace variable needs Re(s) > 0, got {s}")));
    }
    let rate = wtd.rate();
    if (rate - params.rate).abs() > 1e-9 * rate.max(params.rate) {
        return Err(Error::InvalidParameter(format!(
            "waiting-time mean rate {rate} disagrees with params.rate {}",
            params.rate
        )));
    }
    let fa = ancilla_map(&params.kraus()?);
    let coefficient = (wtd.renewal_laplace(s) - 1.0 / s) * rate;
    let dim = params.dim();
    Superoperator::identity(dim).sub(&fa.scale_complex(coefficient)).inverse()
}

pub fn memory_kernel_samples(params: &MicromaserParams, wtd: &WaitingTimeDistribution, s_grid: &[C64]) -> Result<MemoryKernelEval> {
    let kernel_values = s_grid
        .iter()
        .map(|&s| memory_kernel_laplace(params, wtd, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MemoryKernelEval {
        s_grid: s_grid.to_vec(),
        kernel_values,
    })
}

/// Matrix-exponential evolution under a time-independent generator.
#[derive(Debug, Clone)]
pub struct MarkovEvolution {
    propagator: Propagator,
}

impl MarkovEvolution {
    pub fn new(gen: &Superoperator) -> Self {
        Self {
            propagator: Propagator::new(gen),
        }
    }

    pub fn evolve(&self, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("evolution time must be finite and >= 0, got {t}")));
        }
        if rho0.dim() != self.propagator.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.propagator.dim(),
                found: rho0.dim(),
            });
        }
        if t == 0.0 {
            return Ok(rho0.clone());
        }
        let out = self.propagator.propagate(rho0.matrix(), t);
        if let Some((k, _)) = out.iter().enumerate().find(|(_, z)| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { level: k % rho0.dim() });
        }
        let drift = (out.trace() - rho0.trace()).norm();
        if drift > 1e-9 {
            return Err(Error::Precondition(format!(
                "trace drifted by {drift:e} during evolution; the generator is not trace preserving"
            )));
        }
        let herm = (&out + out.adjoint()) * C64::new(0.5, 0.0);
        DensityMatrix::from_matrix(herm)
    }
}

/// `exp(gen t) rho0`.
pub fn evolve_markov(gen: &Superoperator, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    MarkovEvolution::new(gen).evolve(rho0, t)
}

/// Bose-Einstein populations with mean occupation `nbar`, normalized on `dim` levels.
pub fn thermal_populations(nbar: f64, dim: usize) -> Vec<f64> {
    let ratio = nbar / (nbar + 1.0);
    let raw: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}
