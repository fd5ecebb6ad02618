//! Quantum-jump unravelling of the micromaser.
//!
//! Every channel maps number states to number states and the no-jump
//! evolution is diagonal, so a trajectory started in `|m>` stays in a number
//! state. A trajectory is therefore fully described by its initial level and
//! its labelled jump times, and waiting times can be drawn from the exact
//! per-level exponential survival.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;

use crate::collision::{ArrivalConvention, AtomicBranch, KrausSet, RenewalProcess};
use crate::error::{Error, Result};
use crate::fock::{diag_number_function, ladder_operators, sin_sqrt_over_sqrt, DensityMatrix, FockOperator, C64};
use crate::master::MicromaserParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelLabel {
    Cm1,
    C0,
    C1,
    Dm1,
    D0,
    D1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reservoir {
    CavityBath,
    AtomBeam,
}

impl ChannelLabel {
    pub const ALL: [ChannelLabel; 6] = [
        ChannelLabel::Cm1,
        ChannelLabel::C0,
        ChannelLabel::C1,
        ChannelLabel::Dm1,
        ChannelLabel::D0,
        ChannelLabel::D1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta_photons(self) -> i64 {
        match self {
            ChannelLabel::Cm1 | ChannelLabel::Dm1 => -1,
            ChannelLabel::C0 | ChannelLabel::D0 => 0,
            ChannelLabel::C1 | ChannelLabel::D1 => 1,
        }
    }

    pub fn reservoir(self) -> Reservoir {
        match self {
            ChannelLabel::Cm1 | ChannelLabel::D1 => Reservoir::CavityBath,
            _ => Reservoir::AtomBeam,
        }
    }

    /// Label of the atomic collision outcome.
    pub fn from_branch(branch: AtomicBranch) -> Self {
        match branch {
            AtomicBranch::ExcitedExcited => ChannelLabel::C0,
            AtomicBranch::GroundExcited => ChannelLabel::C1,
            AtomicBranch::GroundGround => ChannelLabel::D0,
            AtomicBranch::ExcitedGround => ChannelLabel::Dm1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelLabel::Cm1 => "Cm1",
            ChannelLabel::C0 => "C0",
            ChannelLabel::C1 => "C1",
            ChannelLabel::Dm1 => "Dm1",
            ChannelLabel::D0 => "D0",
            ChannelLabel::D1 => "D1",
        }
    }
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown channel label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpChannel {
    pub label: ChannelLabel,
    pub op: FockOperator,
    pub reservoir: Reservoir,
    pub delta_photons: i64,
}

/// Six labelled jump operators, one per [`ChannelLabel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channels: Vec<JumpChannel>,
}

impl ChannelSet {
    /// Operators in [`ChannelLabel::ALL`] order. Each must shift number
    /// states by its label's photon change.
    pub fn from_operators(ops: Vec<FockOperator>) -> Result<Self> {
        if ops.len() != 6 {
            return Err(Error::InvalidParameter(format!("expected 6 channel operators, got {}", ops.len())));
        }
        let dim = ops[0].dim();
        let mut channels = Vec::with_capacity(6);
        for (label, op) in ChannelLabel::ALL.into_iter().zip(ops) {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
            }
            let delta = label.delta_photons();
            for c in 0..dim {
                for r in 0..dim {
                    if r as i64 - c as i64 != delta && op.get(r, c).norm() != 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "operator for {label} connects level {c} to {r}"
                        )));
                    }
                }
            }
            channels.push(JumpChannel {
                label,
                op,
                reservoir: label.reservoir(),
                delta_photons: delta,
            });
        }
        Ok(Self { channels })
    }

    pub fn dim(&self) -> usize {
        self.channels[0].op.dim()
    }

    pub fn get(&self, label: ChannelLabel) -> &JumpChannel {
        &self.channels[label.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &JumpChannel> {
        self.channels.iter()
    }

    /// `(target level, |<target| L |n>|^2)`, or `None` when the jump would
    /// leave the truncated space.
    pub fn transition(&self, label: ChannelLabel, n: usize) -> Option<(usize, f64)> {
        let target = n as i64 + label.delta_photons();
        if target < 0 || target >= self.dim() as i64 || n >= self.dim() {
            return None;
        }
        let target = target as usize;
        Some((target, self.get(label).op.get(target, n).norm_sqr()))
    }

    /// Total jump rate out of each level, `<n| sum L^dag L |n>`.
    pub fn decay_rates(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|n| self.channels.iter().map(|ch| ch.op.column_norm_sqr(n)).sum())
            .collect()
    }

    /// Jump rate out of each level through channels of one reservoir.
    pub fn reservoir_rates(&self, reservoir: Reservoir) -> Vec<f64> {
        (0..self.dim())
            .map(|n| {
                self.channels
                    .iter()
                    .filter(|ch| ch.reservoir == reservoir)
                    .map(|ch| ch.op.column_norm_sqr(n))
                    .sum()
            })
            .collect()
    }
}

/// The six micromaser jump channels: cavity loss `C-1` and gain `D1` to the
/// thermal bath, photon deposit `C1` and retention `C0` by excited atoms,
/// photon absorption `D-1` and retention `D0` by ground-state atoms.
pub fn build_channels(params: &MicromaserParams) -> Result<ChannelSet> {
    params.validate()?;
    let trunc = params.trunc;
    let (a, a_dag, _) = ladder_operators(trunc);
    let (theta, p, r, g, nbar) = (params.theta, params.p, params.rate, params.gamma, params.nbar);
    let sinc_np1 = diag_number_function(|n| sin_sqrt_over_sqrt(theta, n + 1), trunc)?;
    let sinc_n = diag_number_function(|n| sin_sqrt_over_sqrt(theta, n), trunc)?;
    let cos_np1 = diag_number_function(|n| (theta * ((n + 1) as f64).sqrt()).cos(), trunc)?;
    let cos_n = diag_number_function(|n| (theta * (n as f64).sqrt()).cos(), trunc)?;
    ChannelSet::from_operators(vec![
        a.scale(((nbar + 1.0) * g).sqrt()),
        cos_np1.scale((p * r).sqrt()),
        sinc_n.compose(&a_dag).scale((p * r).sqrt()),
        sinc_np1.compose(&a).scale(((1.0 - p) * r).sqrt()),
        cos_n.scale(((1.0 - p) * r).sqrt()),
        a_dag.scale((nbar * g).sqrt()),
    ])
}

/// `H_c = omega N - (i/2) sum L^dag L`, diagonal in the number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian {
    pub h_c: FockOperator,
    /// `lambda_n = omega n - (i/2) Gamma_n`.
    pub eigen_decay: Vec<C64>,
}

impl EffectiveHamiltonian {
    /// `<n| exp(-i H_c tau) |n>`.
    pub fn no_jump_amplitude(&self, n: usize, tau: f64) -> C64 {
        (C64::new(0.0, -tau) * self.eigen_decay[n]).exp()
    }

    pub fn decay_rate(&self, n: usize) -> f64 {
        -2.0 * self.eigen_decay[n].im
    }
}

pub fn effective_hamiltonian(channels: &ChannelSet, params: &MicromaserParams) -> Result<EffectiveHamiltonian> {
    if channels.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: channels.dim(),
        });
    }
    let eigen_decay: Vec<C64> = channels
        .decay_rates()
        .iter()
        .enumerate()
        .map(|(n, g)| C64::new(params.omega * n as f64, -0.5 * g))
        .collect();
    let h_c = FockOperator::from_matrix(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigen_decay.clone())))?;
    Ok(EffectiveHamiltonian { h_c, eigen_decay })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub label: ChannelLabel,
}

/// Resolution on which jump times are stored: the spacing of doubles just
/// below `horizon`. On this lattice `t -> horizon - t` is exact, so reversing
/// a record twice returns it bit for bit.
pub fn time_quantum(horizon: f64) -> f64 {
    f64::from_bits(horizon.to_bits() + 1) - horizon
}

fn quantize(t: f64, q: f64) -> f64 {
    (t / q).round() * q
}

/// A sampled trajectory `m -> n` over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub initial_level: usize,
    pub final_level: usize,
    pub horizon: f64,
    pub jumps: Vec<Jump>,
    /// Energy delivered by the atomic beam, in units of `omega`.
    pub atom_quanta: i64,
    /// Energy delivered by the cavity bath, in units of `omega`.
    pub bath_quanta: i64,
    /// Set when the trajectory visited the top retained level.
    pub truncation_breach: bool,
}

impl TrajectoryRecord {
    pub fn new(initial_level: usize, horizon: f64, jumps: Vec<Jump>, n_max: usize) -> Result<Self> {
        let mut level = initial_level as i64;
        let (mut atom, mut bath) = (0, 0);
        let mut breach = initial_level >= n_max;
        for j in &jumps {
            let d = j.label.delta_photons();
            level += d;
            if level < 0 || level > n_max as i64 {
                return Err(Error::InconsistentRecord(format!(
                    "jump {} at t = {} leaves the truncated space",
                    j.label, j.time
                )));
            }
            breach |= level == n_max as i64;
            match j.label.reservoir() {
                Reservoir::AtomBeam => atom += d,
                Reservoir::CavityBath => bath += d,
            }
        }
        let record = Self {
            initial_level,
            final_level: level as usize,
            horizon,
            jumps,
            atom_quanta: atom,
            bath_quanta: bath,
            truncation_breach: breach,
        };
        record.validate(n_max)?;
        Ok(record)
    }

    /// Checks ordering, levels and the energy bookkeeping.
    pub fn validate(&self, n_max: usize) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InconsistentRecord(format!("horizon {} is not positive", self.horizon)));
        }
        let mut prev = 0.0;
        for j in &self.jumps {
            if !(j.time > prev && j.time < self.horizon) {
                return Err(Error::InconsistentRecord(format!(
                    "jump time {} is not strictly increasing inside (0, {})",
                    j.time, self.horizon
                )));
            }
            prev = j.time;
        }
        if self.initial_level > n_max || self.final_level > n_max {
            return Err(Error::InconsistentRecord("boundary level above n_max".into()));
        }
        let (mut atom, mut bath) = (0, 0);
        for j in &self.jumps {
            match j.label.reservoir() {
                Reservoir::AtomBeam => atom += j.label.delta_photons(),
                Reservoir::CavityBath => bath += j.label.delta_photons(),
            }
        }
        if atom != self.atom_quanta || bath != self.bath_quanta {
            return Err(Error::InconsistentRecord("energy ledger disagrees with the jump labels".into()));
        }
        if self.initial_level as i64 + atom + bath != self.final_level as i64 {
            return Err(Error::InconsistentRecord(format!(
                "levels {} -> {} do not match a net photon change of {}",
                self.initial_level,
                self.final_level,
                atom + bath
            )));
        }
        Ok(())
    }

    /// Photon number just after time `t`.
    pub fn level_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.time <= t);
        (self.initial_level as i64 + self.jumps[..k].iter().map(|j| j.label.delta_photons()).sum::<i64>()) as usize
    }

    /// `(level, dwell time)` for each stretch between jumps, in time order.
    pub fn segments(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut level = self.initial_level as i64;
        let mut t = 0.0;
        for j in &self.jumps {
            out.push((level as usize, j.time - t));
            level += j.label.delta_photons();
            t = j.time;
        }
        out.push((level as usize, self.horizon - t));
        out
    }
}

const DUMP_MAGIC: &str = "# micromaser trajectory dump v1";
const DUMP_COLUMNS: &str =
    "# columns: initial_level\tfinal_level\thorizon\tatom_quanta\tbath_quanta\ttruncation_breach\tjumps (time:label,...; - when empty)";

/// Writes records one per line after a self-describing header. Extra
/// header lines are emitted as comments.
pub fn write_dump<W: Write>(records: &[TrajectoryRecord], extra_header: &[String], mut out: W) -> Result<()> {
    writeln!(out, "{DUMP_MAGIC}")?;
    for line in extra_header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{DUMP_COLUMNS}")?;
    for r in records {
        let jumps = if r.jumps.is_empty() {
            "-".to_string()
        } else {
            r.jumps.iter().map(|j| format!("{}:{}", j.time, j.label)).collect::<Vec<_>>().join(",")
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.initial_level,
            r.final_level,
            r.horizon,
            r.atom_quanta,
            r.bath_quanta,
            u8::from(r.truncation_breach),
            jumps
        )?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    let mut saw_magic = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let perr = |message: String| Error::Parse { line: lineno, message };
        if line.starts_with('#') {
            saw_magic |= line == DUMP_MAGIC;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_magic {
            return Err(perr("missing dump header".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(perr(format!("expected 7 fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|e| perr(format!("{s:?}: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("{s:?}: {e}")));
        let initial = usize::try_from(int(fields[0])?).map_err(|e| perr(e.to_string()))?;
        let final_level = usize::try_from(int(fields[1])?).map_err(|e| perr(e.to_string()))?;
        let horizon = float(fields[2])?;
        let atom = int(fields[3])?;
        let bath = int(fields[4])?;
        let breach = match fields[5] {
            "0" => false,
            "1" => true,
            other => return Err(perr(format!("bad breach flag {other:?}"))),
        };
        let mut jumps = Vec::new();
        if fields[6] != "-" {
            for item in fields[6].split(',') {
                let (t, l) = item.split_once(':').ok_or_else(|| perr(format!("bad jump {item:?}")))?;
                jumps.push(Jump {
                    time: float(t)?,
                    label: l.parse().map_err(|e: Error| perr(e.to_string()))?,
                });
            }
        }
        let record = TrajectoryRecord {
            initial_level: initial,
            final_level,
            horizon,
            jumps,
            atom_quanta: atom,
            bath_quanta: bath,
            truncation_breach: breach,
        };
        record.validate(usize::MAX - 1).map_err(|e| perr(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

fn check_record_levels(channels: &ChannelSet, record: &TrajectoryRecord) -> Result<()> {
    record.validate(channels.dim() - 1)
}

/// `ln |<n| e^{-i H_c (t - t_k)} L_k ... L_1 e^{-i H_c t_1} |m>|^2` for the
/// operators of `channels`, with `H_c` built from the same operators.
pub fn log_path_density(channels: &ChannelSet, record: &TrajectoryRecord) -> Result<f64> {
    check_record_levels(channels, record)?;
    let rates = channels.decay_rates();
    let mut log = 0.0;
    let mut level = record.initial_level;
    let mut t = 0.0;
    for j in &record.jumps {
        log -= rates[level] * (j.time - t);
        let (target, amp) = channels
            .transition(j.label, level)
            .ok_or_else(|| Error::InconsistentRecord(format!("{} cannot act on level {level}", j.label)))?;
        if amp == 0.0 {
            return Err(Error::InconsistentRecord(format!(
                "{} has zero amplitude on level {level} at t = {}",
                j.label, j.time
            )));
        }
        log += amp.ln();
        level = target;
        t = j.time;
    }
    log -= rates[level] * (record.horizon - t);
    Ok(log)
}

/// Probability density of a Poisson-mode record conditioned on its initial level.
pub fn trajectory_probability_density(params: &MicromaserParams, record: &TrajectoryRecord) -> Result<f64> {
    Ok(log_path_density(&build_channels(params)?, record)?.exp())
}

/// Log density of a renewal-mode record: the arrival-time density of the
/// collision times, times `|<n'|L|n>|^2 / R` for each collision outcome,
/// times the cavity-bath path density between collisions.
pub fn log_renewal_path_density(
    channels: &ChannelSet,
    process: &RenewalProcess,
    convention: ArrivalConvention,
    record: &TrajectoryRecord,
) -> Result<f64> {
    check_record_levels(channels, record)?;
    let rate = process.rate();
    let bath_rates = channels.reservoir_rates(Reservoir::CavityBath);
    let mut log = 0.0;
    let mut level = record.initial_level;
    let mut t = 0.0;
    let mut last_collision: Option<f64> = None;
    for j in &record.jumps {
        log -= bath_rates[level] * (j.time - t);
        let (target, amp) = channels
            .transition(j.label, level)
            .ok_or_else(|| Error::InconsistentRecord(format!("{} cannot act on level {level}", j.label)))?;
        if amp == 0.0 {
            return Err(Error::InconsistentRecord(format!(
                "{} has zero amplitude on level {level} at t = {}",
                j.label, j.time
            )));
        }
        match j.label.reservoir() {
            Reservoir::CavityBath => log += amp.ln(),
            Reservoir::AtomBeam => {
                log += (amp / rate).ln();
                log += match (last_collision, convention) {
                    (None, ArrivalConvention::Stationary) => process.residual_density(j.time).ln(),
                    (None, ArrivalConvention::FirstJumpW) => process.wtd().density(j.time).ln(),
                    (Some(prev), _) => process.wtd().density(j.time - prev).ln(),
                };
                last_collision = Some(j.time);
            }
        }
        level = target;
        t = j.time;
    }
    log -= bath_rates[level] * (record.horizon - t);
    log += match (last_collision, convention) {
        (Some(prev), _) => process.survival(record.horizon - prev).ln(),
        (None, ArrivalConvention::Stationary) => process.no_arrival(record.horizon).ln(),
        (None, ArrivalConvention::FirstJumpW) => process.survival(record.horizon).ln(),
    };
    if log.is_nan() || log == f64::INFINITY {
        return Err(Error::InconsistentRecord("arrival density is not finite".into()));
    }
    Ok(log)
}

/// Per-level jump tables for Gillespie sampling.
#[derive(Debug, Clone)]
struct LevelTable {
    /// `(label, target, rate)` for each open channel.
    exits: Vec<Vec<(ChannelLabel, usize, f64)>>,
    totals: Vec<f64>,
}

impl LevelTable {
    fn new(channels: &ChannelSet, filter: impl Fn(ChannelLabel) -> bool) -> Self {
        let dim = channels.dim();
        let mut exits = vec![Vec::new(); dim];
        for (n, exit) in exits.iter_mut().enumerate() {
            for label in ChannelLabel::ALL.into_iter().filter(|l| filter(*l)) {
                if let Some((target, rate)) = channels.transition(label, n) {
                    if rate > 0.0 {
                        exit.push((label, target, rate));
                    }
                }
            }
        }
        let totals = exits.iter().map(|e| e.iter().map(|x| x.2).sum()).collect();
        Self { exits, totals }
    }

    fn choose<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (ChannelLabel, usize) {
        let exits = &self.exits[n];
        let u = rng.random::<f64>() * self.totals[n];
        let mut acc = 0.0;
        for &(label, target, rate) in exits {
            acc += rate;
            if u < acc {
                return (label, target);
            }
        }
        let &(label, target, _) = exits.last().expect("positive total rate");
        (label, target)
    }

    fn waiting_time<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        let total = self.totals[n];
        if total > 0.0 {
            rng.sample(Exp::new(total).expect("positive rate"))
        } else {
            f64::INFINITY
        }
    }
}

/// Appends a jump at `t` rounded onto the time lattice, keeping times
/// strictly increasing. Returns the stored time, or `None` if it falls at or
/// beyond the horizon.
fn push_jump(jumps: &mut Vec<Jump>, t: f64, label: ChannelLabel, horizon: f64, q: f64) -> Option<f64> {
    let mut tq = quantize(t, q);
    let prev = jumps.last().map_or(0.0, |j| j.time);
    if tq <= prev {
        tq = prev + q;
    }
    if tq >= horizon {
        return None;
    }
    jumps.push(Jump { time: tq, label });
    Some(tq)
}

/// Poisson-arrival unravelling of the full master equation.
#[derive(Debug, Clone)]
pub struct PoissonSimulator {
    table: LevelTable,
    n_max: usize,
}

impl PoissonSimulator {
    pub fn new(params: &MicromaserParams) -> Result<Self> {
        let channels = build_channels(params)?;
        Ok(Self {
            table: LevelTable::new(&channels, |_| true),
            n_max: params.trunc.n_max(),
        })
    }

    pub fn run<R: Rng + ?Sized>(&self, initial_level: usize, horizon: f64, rng: &mut R) -> Result<TrajectoryRecord> {
        check_start(initial_level, horizon, self.n_max)?;
        let q = time_quantum(horizon);
        let mut jumps = Vec::new();
        let mut level = initial_level;
        let mut t = 0.0;
        loop {
            let next = t + self.table.waiting_time(level, rng);
            if next >= horizon {
                break;
            }
            let (label, target) = self.table.choose(level, rng);
            match push_jump(&mut jumps, next, label, horizon, q) {
                Some(tq) => t = tq,
                None => break,
            }
            level = target;
        }
        TrajectoryRecord::new(initial_level, horizon, jumps, self.n_max)
    }
}

fn check_start(initial_level: usize, horizon: f64, n_max: usize) -> Result<()> {
    if initial_level > n_max {
        return Err(Error::InvalidParameter(format!("initial level {initial_level} exceeds n_max = {n_max}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

pub fn simulate_trajectory_poisson(params: &MicromaserParams, initial_level: usize, horizon: f64, seed: u64) -> Result<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PoissonSimulator::new(params)?.run(initial_level, horizon, &mut rng)
}

/// Renewal-arrival unravelling: one Kraus branch per collision, cavity-bath
/// jumps sampled between collisions.
#[derive(Debug, Clone)]
pub struct RenewalSimulator {
    bath: LevelTable,
    branches: Vec<Vec<(ChannelLabel, usize, f64)>>,
    process: RenewalProcess,
    convention: ArrivalConvention,
    n_max: usize,
}

impl RenewalSimulator {
    pub fn new(params: &MicromaserParams, process: RenewalProcess, convention: ArrivalConvention) -> Result<Self> {
        let channels = build_channels(params)?;
        let kraus: KrausSet = params.kraus()?;
        let dim = params.dim();
        let branches = (0..dim)
            .map(|n| {
                AtomicBranch::ALL
                    .iter()
                    .filter_map(|&b| {
                        let target = n as i64 + b.delta_photons();
                        if target < 0 || target >= dim as i64 {
                            return None;
                        }
                        let prob = kraus.operator(b).get(target as usize, n).norm_sqr();
                        (prob > 0.0).then_some((ChannelLabel::from_branch(b), target as usize, prob))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            bath: LevelTable::new(&channels, |l| l.reservoir() == Reservoir::CavityBath),
            branches,
            process,
            convention,
            n_max: params.trunc.n_max(),
        })
    }

    pub fn process(&self) -> &RenewalProcess {
        &self.process
    }

    pub fn run<R: Rng + ?Sized>(&self, initial_level: usize, horizon: f64, rng: &mut R) -> Result<TrajectoryRecord> {
        check_start(initial_level, horizon, self.n_max)?;
        let q = time_quantum(horizon);
        let arrivals = self.process.sample_arrivals(horizon, self.convention, rng);
        let mut jumps = Vec::new();
        let mut level = initial_level;
        let mut t = 0.0;
        for stop in arrivals.into_iter().chain(std::iter::once(horizon)) {
            loop {
                let next = t + self.bath.waiting_time(level, rng);
                if next >= stop {
                    break;
                }
                let (label, target) = self.bath.choose(level, rng);
                match push_jump(&mut jumps, next, label, horizon, q) {
                    Some(tq) => t = tq,
                    None => break,
                }
                level = target;
            }
            if stop >= horizon {
                break;
            }
            let (label, target) = self.collide(level, rng);
            if let Some(tq) = push_jump(&mut jumps, stop, label, horizon, q) {
                t = tq;
                level = target;
            } else {
                break;
            }
        }
        TrajectoryRecord::new(initial_level, horizon, jumps, self.n_max)
    }

    fn collide<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (ChannelLabel, usize) {
        let options = &self.branches[n];
        // Probabilities sum to one except on the top level, where the
        // deposit branch is cut off by the truncation.
        let total: f64 = options.iter().map(|o| o.2).sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for &(label, target, prob) in options {
            acc += prob;
            if u < acc {
                return (label, target);
            }
        }
        let &(label, target, _) = options.last().expect("some branch is open");
        (label, target)
    }
}

pub fn simulate_trajectory_renewal(
    params: &MicromaserParams,
    process: &RenewalProcess,
    initial_level: usize,
    horizon: f64,
    seed: u64,
    convention: ArrivalConvention,
) -> Result<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RenewalSimulator::new(params, process.clone(), convention)?.run(initial_level, horizon, &mut rng)
}

/// How atoms arrive during an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalMode {
    Poisson,
    Renewal {
        process: RenewalProcess,
        convention: ArrivalConvention,
    },
}

enum Simulator {
    Poisson(PoissonSimulator),
    Renewal(RenewalSimulator),
}

impl Simulator {
    fn run<R: Rng + ?Sized>(&self, initial: usize, horizon: f64, rng: &mut R) -> Result<TrajectoryRecord> {
        match self {
            Simulator::Poisson(s) => s.run(initial, horizon, rng),
            Simulator::Renewal(s) => s.run(initial, horizon, rng),
        }
    }
}

/// Random stream of trajectory `index` under `master_seed`: ChaCha8 seeded
/// from the master seed, with the trajectory index as stream number.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Simulates `n_traj` trajectories in parallel. Initial levels are drawn
/// from the populations of `rho0`, which must be diagonal. The result does
/// not depend on the number of worker threads.
pub fn simulate_ensemble(
    params: &MicromaserParams,
    mode: &ArrivalMode,
    rho0: &DensityMatrix,
    n_traj: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    if rho0.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: rho0.dim(),
        });
    }
    if !rho0.is_diagonal(1e-12) {
        return Err(Error::Precondition(
            "trajectory ensembles start from number-state mixtures; rho0 must be diagonal".into(),
        ));
    }
    let pops = rho0.populations();
    let sim = match mode {
        ArrivalMode::Poisson => Simulator::Poisson(PoissonSimulator::new(params)?),
        ArrivalMode::Renewal { process, convention } => {
            Simulator::Renewal(RenewalSimulator::new(params, process.clone(), *convention)?)
        }
    };
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let initial = sample_level(&pops, &mut rng);
            sim.run(initial, horizon, &mut rng)
        })
        .collect()
}

fn sample_level<R: Rng + ?Sized>(pops: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * pops.iter().sum::<f64>();
    let mut acc = 0.0;
    for (n, p) in pops.iter().enumerate() {
        acc += p;
        if u < acc {
            return n;
        }
    }
    pops.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Ensemble-averaged density matrices with per-level standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAverage {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// `std_err[k][n]`: standard error of the population of level `n` at `times[k]`.
    pub std_err: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub breach_fraction: f64,
    pub warning: Option<String>,
}

impl EnsembleAverage {
    /// `(1/2) sum_n SE_n`: the scale of Monte Carlo noise in a trace distance.
    pub fn trace_distance_std_err(&self, k: usize) -> f64 {
        0.5 * self.std_err[k].iter().sum::<f64>()
    }
}

/// Averages number-state trajectories at `times`.
pub fn average_records(records: &[TrajectoryRecord], times: &[f64], dim: usize) -> Result<EnsembleAverage> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to average".into()));
    }
    let n = records.len() as f64;
    let mut states = Vec::with_capacity(times.len());
    let mut std_err = Vec::with_capacity(times.len());
    for &t in times {
        let mut counts = vec![0u64; dim];
        for r in records {
            if t > r.horizon {
                return Err(Error::Grid(format!("sample time {t} lies beyond the horizon {}", r.horizon)));
            }
            counts[r.level_at(t)] += 1;
        }
        let pops: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        std_err.push(pops.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect());
        states.push(DensityMatrix::from_populations(&pops)?);
    }
    let breaches = records.iter().filter(|r| r.truncation_breach).count();
    let breach_fraction = breaches as f64 / n;
    let warning = (breach_fraction > 0.01).then(|| {
        format!(
            "{:.2}% of trajectories reached the truncation level; increase n_max",
            100.0 * breach_fraction
        )
    });
    Ok(EnsembleAverage {
        times: times.to_vec(),
        states,
        std_err,
        n_traj: records.len(),
        breach_fraction,
        warning,
    })
}

/// Simulates an ensemble up to the last sample time and averages it.
pub fn ensemble_average(
    params: &MicromaserParams,
    mode: &ArrivalMode,
    rho0: &DensityMatrix,
    n_traj: usize,
    times: &[f64],
    seed: u64,
) -> Result<EnsembleAverage> {
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::Grid("sample times must be nonempty, finite and >= 0".into()));
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let horizon = if horizon > 0.0 { horizon } else { 1.0 };
    let records = simulate_ensemble(params, mode, rho0, n_traj, horizon, seed)?;
    average_records(&records, times, params.dim())
}
