//! Dual (time-reversed) jump operators and trajectory fluctuation relations.
//!
//! Time reversal acts as complex conjugation in the number basis. All
//! micromaser channels are real matrices and the steady states used here are
//! diagonal, so the conjugation never changes a matrix element.

use crate::collision::{ArrivalConvention, RenewalProcess};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockOperator};
use crate::master::{steady_state_analytic, MicromaserParams};
use crate::trajectory::{build_channels, log_path_density, log_renewal_path_density, ChannelLabel, ChannelSet, Jump, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualVariant {
    /// Duals taken with respect to the full steady state.
    WholeSteadyState,
    /// Each channel reversed against the temperature of its own reservoir.
    PerReservoir,
}

/// Dual label and dual operator for each forward channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DualChannelMap {
    variant: DualVariant,
    labels: [ChannelLabel; 6],
    /// Indexed by dual label: the operator applied when a reversed record
    /// shows that label.
    channels: ChannelSet,
}

impl DualChannelMap {
    fn new(variant: DualVariant, labels: [ChannelLabel; 6], duals: [FockOperator; 6]) -> Result<Self> {
        let mut slots: Vec<Option<FockOperator>> = vec![None; 6];
        for (l, op) in ChannelLabel::ALL.iter().zip(duals) {
            let slot = &mut slots[labels[l.index()].index()];
            if slot.is_some() {
                return Err(Error::InvalidParameter("dual label map is not a bijection".into()));
            }
            *slot = Some(op);
        }
        let channels = ChannelSet::from_operators(slots.into_iter().map(|o| o.expect("bijection")).collect())?;
        Ok(Self { variant, labels, channels })
    }

    pub fn variant(&self) -> DualVariant {
        self.variant
    }

    pub fn dual_label(&self, label: ChannelLabel) -> ChannelLabel {
        self.labels[label.index()]
    }

    /// Dual of the forward channel `label`.
    pub fn dual_operator(&self, label: ChannelLabel) -> &FockOperator {
        &self.channels.get(self.dual_label(label)).op
    }

    /// Operators by dual label, for evaluating reversed records.
    pub fn dual_channels(&self) -> &ChannelSet {
        &self.channels
    }
}

/// `Theta rho_ss^{1/2} L^dag rho_ss^{-1/2} Theta^-1` for diagonal `rho_ss`:
/// element `(i, j)` is `sqrt(P_i / P_j) L_ji`.
pub fn crooks_dual(l: &FockOperator, rho_ss: &DensityMatrix) -> Result<FockOperator> {
    let dim = l.dim();
    if rho_ss.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho_ss.dim() });
    }
    if !rho_ss.is_diagonal(0.0) {
        return Err(Error::Precondition("the dual is defined here for diagonal steady states only".into()));
    }
    let pops = rho_ss.populations();
    let mut m = nalgebra::DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let lji = l.get(j, i);
            if lji.norm() == 0.0 {
                continue;
            }
            for k in [i, j] {
                if !(pops[k] > 0.0) {
                    return Err(Error::ZeroPopulation(k));
                }
            }
            m[(i, j)] = lji * (pops[i] / pops[j]).sqrt();
        }
    }
    FockOperator::from_matrix(m)
}

/// Labels of the steady-state duals: photon gains and losses swap within
/// each letter, `C_i -> C_-i` and `D_i -> D_-i`.
fn whole_state_labels() -> [ChannelLabel; 6] {
    use ChannelLabel::*;
    let mut labels = [Cm1; 6];
    for (l, d) in [(Cm1, C1), (C0, C0), (C1, Cm1), (Dm1, D1), (D0, D0), (D1, Dm1)] {
        labels[l.index()] = d;
    }
    labels
}

pub fn whole_steady_state_duals(channels: &ChannelSet, rho_ss: &DensityMatrix) -> Result<DualChannelMap> {
    let duals: Vec<FockOperator> = ChannelLabel::ALL
        .iter()
        .map(|&l| crooks_dual(&channels.get(l).op, rho_ss))
        .collect::<Result<_>>()?;
    let duals: [FockOperator; 6] = duals.try_into().expect("six channels");
    DualChannelMap::new(DualVariant::WholeSteadyState, whole_state_labels(), duals)
}

/// Per-reservoir duals: `C-1 <-> D1` through the cavity-bath temperature,
/// `C1 <-> D-1` through the beam temperature, `C0` and `D0` fixed.
pub fn crooks_dual_per_reservoir(channels: &ChannelSet, params: &MicromaserParams) -> Result<DualChannelMap> {
    use ChannelLabel::*;
    let (beta_a, beta_c) = finite_betas(params)?;
    let w = params.omega;
    let half = |beta: f64, sign: f64| (sign * 0.5 * w * beta).exp();
    let op = |l: ChannelLabel| channels.get(l).op.adjoint();
    let duals = [
        op(Cm1).scale(half(beta_c, -1.0)),
        channels.get(C0).op.clone(),
        op(C1).scale(half(beta_a, 1.0)),
        op(Dm1).scale(half(beta_a, -1.0)),
        channels.get(D0).op.clone(),
        op(D1).scale(half(beta_c, 1.0)),
    ];
    let mut labels = [Cm1; 6];
    for (l, d) in [(Cm1, D1), (C0, C0), (C1, Dm1), (Dm1, C1), (D0, D0), (D1, Cm1)] {
        labels[l.index()] = d;
    }
    DualChannelMap::new(DualVariant::PerReservoir, labels, duals)
}

fn finite_betas(params: &MicromaserParams) -> Result<(f64, f64)> {
    let (beta_a, beta_c) = (params.beta_a(), params.beta_c());
    if !beta_a.is_finite() {
        return Err(Error::InfiniteBeta("atomic beam (p must lie strictly between 0 and 1)"));
    }
    if !beta_c.is_finite() {
        return Err(Error::InfiniteBeta("cavity bath (nbar must be positive)"));
    }
    Ok((beta_a, beta_c))
}

/// Swaps the boundary levels, reflects jump times `t_l -> t - t_l`, reverses
/// their order and replaces every label by its dual.
pub fn reverse_trajectory(record: &TrajectoryRecord, dual_map: &DualChannelMap) -> Result<TrajectoryRecord> {
    let n_max = dual_map.dual_channels().dim() - 1;
    record.validate(n_max)?;
    let jumps = record
        .jumps
        .iter()
        .rev()
        .map(|j| Jump {
            time: record.horizon - j.time,
            label: dual_map.dual_label(j.label),
        })
        .collect();
    let reversed = TrajectoryRecord::new(record.final_level, record.horizon, jumps, n_max)
        .map_err(|e| Error::InconsistentRecord(format!("reversed record is inconsistent: {e}")))?;
    if reversed.initial_level != record.final_level || reversed.final_level != record.initial_level {
        return Err(Error::InconsistentRecord("dual labels do not reverse the photon bookkeeping".into()));
    }
    Ok(reversed)
}

/// Energy received from each reservoir and the matching entropy flows
/// (`k_B = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyFlows {
    pub de_a: f64,
    pub de_c: f64,
    pub ds_a: f64,
    pub ds_c: f64,
}

pub fn entropy_flows(record: &TrajectoryRecord, params: &MicromaserParams) -> Result<EntropyFlows> {
    let (beta_a, beta_c) = finite_betas(params)?;
    let de_a = record.atom_quanta as f64 * params.omega;
    let de_c = record.bath_quanta as f64 * params.omega;
    Ok(EntropyFlows {
        de_a,
        de_c,
        ds_a: -de_a * beta_a,
        ds_c: -de_c * beta_c,
    })
}

/// Measured and predicted `ln P~[reversed] - ln P[forward]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationCheck {
    pub log_ratio_measured: f64,
    pub log_ratio_predicted: f64,
}

impl FluctuationCheck {
    pub fn deviation(&self) -> f64 {
        (self.log_ratio_measured - self.log_ratio_predicted).abs()
    }
}

fn predicted_log_ratio(record: &TrajectoryRecord, params: &MicromaserParams) -> Result<f64> {
    let flows = entropy_flows(record, params)?;
    Ok(-(flows.ds_a + flows.ds_c))
}

fn require_per_reservoir(dual_map: &DualChannelMap) -> Result<()> {
    if dual_map.variant() != DualVariant::PerReservoir {
        return Err(Error::Precondition(
            "fluctuation relations need per-reservoir duals; steady-state duals give no entropy balance".into(),
        ));
    }
    Ok(())
}

/// Fluctuation identity for a Poisson-mode record, boundary terms excluded.
pub fn fluctuation_check(record: &TrajectoryRecord, params: &MicromaserParams, dual_map: &DualChannelMap) -> Result<FluctuationCheck> {
    require_per_reservoir(dual_map)?;
    let forward = log_path_density(&build_channels(params)?, record)?;
    let reversed = reverse_trajectory(record, dual_map)?;
    let backward = log_path_density(dual_map.dual_channels(), &reversed)?;
    Ok(FluctuationCheck {
        log_ratio_measured: backward - forward,
        log_ratio_predicted: predicted_log_ratio(record, params)?,
    })
}

/// Fluctuation identity for a renewal-mode record. The reversed collision
/// times have the same arrival density only for a stationary beam, so the
/// stationary convention is required.
pub fn fluctuation_check_renewal(
    record: &TrajectoryRecord,
    params: &MicromaserParams,
    process: &RenewalProcess,
    convention: ArrivalConvention,
    dual_map: &DualChannelMap,
) -> Result<FluctuationCheck> {
    require_per_reservoir(dual_map)?;
    if convention != ArrivalConvention::Stationary {
        return Err(Error::Precondition(
            "reversal maps a stationary arrival stream onto itself; other conventions break the identity".into(),
        ));
    }
    let forward = log_renewal_path_density(&build_channels(params)?, process, convention, record)?;
    let reversed = reverse_trajectory(record, dual_map)?;
    let backward = log_renewal_path_density(dual_map.dual_channels(), process, convention, &reversed)?;
    Ok(FluctuationCheck {
        log_ratio_measured: backward - forward,
        log_ratio_predicted: predicted_log_ratio(record, params)?,
    })
}

/// `ln(P_ss(m) / P_ss(n))`: the boundary term left out of [`fluctuation_check`].
pub fn boundary_correction(record: &TrajectoryRecord, rho_ss: &DensityMatrix) -> Result<f64> {
    let (pm, pn) = (rho_ss.population(record.initial_level), rho_ss.population(record.final_level));
    for (level, p) in [(record.initial_level, pm), (record.final_level, pn)] {
        if !(p > 0.0) {
            return Err(Error::ZeroPopulation(level));
        }
    }
    Ok(pm.ln() - pn.ln())
}

/// Steady-state weighted probabilities of a record and of its reversal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualProbabilityCheck {
    /// `ln(P[record] P_ss(m))`.
    pub log_forward: f64,
    /// `ln(P~[reversed] P_ss(n))`.
    pub log_reverse: f64,
}

impl DualProbabilityCheck {
    pub fn relative_difference(&self) -> f64 {
        (self.log_reverse - self.log_forward).exp_m1().abs()
    }
}

/// At `p = 1`, `nbar = 0`: compares `P[record] P_ss(m)` with the steady-state
/// dual probability of the reversed record weighted by `P_ss(n)`.
pub fn steady_state_dual_probability_check(params: &MicromaserParams, record: &TrajectoryRecord) -> Result<DualProbabilityCheck> {
    if params.p != 1.0 || params.nbar != 0.0 {
        return Err(Error::Precondition("the steady-state dual equality is stated for p = 1 and nbar = 0".into()));
    }
    let channels = build_channels(params)?;
    let rho_ss = steady_state_analytic(params)?;
    let duals = whole_steady_state_duals(&channels, &rho_ss)?;
    let reversed = reverse_trajectory(record, &duals)?;
    let pm = rho_ss.population(record.initial_level);
    let pn = rho_ss.population(record.final_level);
    for (level, p) in [(record.initial_level, pm), (record.final_level, pn)] {
        if !(p > 0.0) {
            return Err(Error::ZeroPopulation(level));
        }
    }
    Ok(DualProbabilityCheck {
        log_forward: log_path_density(&channels, record)? + pm.ln(),
        log_reverse: log_path_density(duals.dual_channels(), &reversed)? + pn.ln(),
    })
}
