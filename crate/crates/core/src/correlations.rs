//! Steady-state two-time correlations by the quantum regression theorem.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock::{ladder_operators, steady_state_nullspace, DensityMatrix, FockOperator, Propagator, Superoperator};
use crate::master::{full_liouvillian, MicromaserParams};
use crate::trajectory::{build_channels, ChannelLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Squared steady-state rate that divides the raw correlation.
    pub normalization: f64,
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Grid("time grid is empty".into()));
    }
    if t_grid[0] != 0.0 {
        return Err(Error::Grid("time grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || !t_grid.iter().all(|t| t.is_finite()) {
        return Err(Error::Grid("time grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Steady state and propagator shared by all regression evaluations.
struct Regression {
    rho_ss: DensityMatrix,
    propagator: Propagator,
}

impl Regression {
    fn new(params: &MicromaserParams) -> Result<Self> {
        let gen = full_liouvillian(params)?;
        let rho_ss = steady_state_nullspace(&gen)?;
        Ok(Self {
            rho_ss,
            propagator: Propagator::new(&gen),
        })
    }

    /// `Tr[J^dag J e^{L t}(J rho_ss J^dag)] / Tr[J^dag J rho_ss]^2`.
    fn series(&self, jump: &FockOperator, t_grid: &[f64]) -> Result<CorrelationSeries> {
        let dim = self.rho_ss.dim();
        let rate_op = jump.adjoint().compose(jump);
        let rate = self.rho_ss.expectation(&rate_op).re;
        if !(rate > 0.0) {
            return Err(Error::Precondition("the monitored channel has zero steady-state rate".into()));
        }
        let jumped = Superoperator::sandwich(jump, &jump.adjoint())?.apply(self.rho_ss.matrix());
        let values = t_grid
            .iter()
            .map(|&t| {
                let evolved = if t == 0.0 { jumped.clone() } else { self.propagator.propagate(&jumped, t) };
                let mut acc = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        acc += (rate_op.get(i, j) * evolved[(j, i)]).re;
                    }
                }
                acc / (rate * rate)
            })
            .collect();
        Ok(CorrelationSeries {
            t_grid: t_grid.to_vec(),
            values,
            normalization: rate * rate,
        })
    }
}

/// Intensity correlation of the cavity field, `<a^dag a^dag(t) a(t) a> / <N>^2`.
pub fn g2_field(params: &MicromaserParams, t_grid: &[f64]) -> Result<CorrelationSeries> {
    check_grid(t_grid)?;
    let (a, _, _) = ladder_operators(params.trunc);
    Regression::new(params)?.series(&a, t_grid)
}

/// Correlation of photon-depositing atoms leaving the cavity, monitored
/// through the `C1` channel.
pub fn g1_beam(params: &MicromaserParams, t_grid: &[f64]) -> Result<CorrelationSeries> {
    check_grid(t_grid)?;
    if params.p == 0.0 || params.theta == 0.0 || params.rate == 0.0 {
        return Err(Error::Precondition("no photon-depositing atoms: need p > 0, theta > 0 and R > 0".into()));
    }
    let c1 = build_channels(params)?.get(ChannelLabel::C1).op.clone();
    Regression::new(params)?.series(&c1, t_grid)
}

/// `P(n, t; m, 0)` for all `n, m`: row `n`, column `m`.
pub fn joint_probability_matrix(params: &MicromaserParams, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    let reg = Regression::new(params)?;
    let pops = reg.rho_ss.populations();
    let transfer = if t == 0.0 {
        DMatrix::identity(params.dim(), params.dim())
    } else {
        reg.propagator
            .population_transfer(t)
            .ok_or_else(|| Error::Precondition("populations do not form one invariant block".into()))?
    };
    Ok(DMatrix::from_fn(params.dim(), params.dim(), |n, m| transfer[(n, m)] * pops[m]))
}

/// Joint probability of `m` photons at time 0 and `n` photons at time `t`
/// in the steady state.
pub fn joint_probability(params: &MicromaserParams, n: usize, m: usize, t: f64) -> Result<f64> {
    let n_max = params.trunc.n_max();
    if n > n_max || m > n_max {
        return Err(Error::InvalidParameter(format!("levels ({n}, {m}) exceed n_max = {n_max}")));
    }
    Ok(joint_probability_matrix(params, t)?[(n, m)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualityMode {
    /// Requires `p = 1` and `nbar = 0`, where the equalities hold.
    Strict,
    /// Evaluates the deviations at any parameters; nothing is asserted.
    Diagnostic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub g2: CorrelationSeries,
    pub g1: CorrelationSeries,
    /// `max_t |g2(t) - g1(t)|`.
    pub max_correlation_deviation: f64,
    /// `max |P(n, t; m, 0) - P(m, t; n, 0)|` over `t` in the grid and `n, m <= levels`.
    pub max_joint_asymmetry: f64,
}

pub fn duality_report(params: &MicromaserParams, t_grid: &[f64], levels: usize, mode: DualityMode) -> Result<DualityReport> {
    if mode == DualityMode::Strict && (params.p != 1.0 || params.nbar != 0.0) {
        return Err(Error::Precondition("the correlation duality holds for p = 1 and nbar = 0 only".into()));
    }
    let levels = levels.min(params.trunc.n_max());
    let g2 = g2_field(params, t_grid)?;
    let g1 = g1_beam(params, t_grid)?;
    let max_correlation_deviation = g2
        .values
        .iter()
        .zip(&g1.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut max_joint_asymmetry: f64 = 0.0;
    for &t in t_grid {
        let joint = joint_probability_matrix(params, t)?;
        for n in 0..=levels {
            for m in 0..n {
                max_joint_asymmetry = max_joint_asymmetry.max((joint[(n, m)] - joint[(m, n)]).abs());
            }
        }
    }
    Ok(DualityReport {
        g2,
        g1,
        max_correlation_deviation,
        max_joint_asymmetry,
    })
}
