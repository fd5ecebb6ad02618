//! Micromaser simulation and verification.
//!
//! The cavity mode lives on a truncated Fock space ([`fock`]). Atoms arrive
//! according to a renewal process and act on the cavity through impulsive
//! Jaynes-Cummings Kraus maps ([`collision`]). Averaging over arrivals gives
//! the master equations in [`master`]; [`trajectory`] unravels the same
//! dynamics into labelled quantum-jump records. [`reversal`] builds the
//! time-reversed (dual) records and checks the detailed fluctuation relation,
//! and [`correlations`] evaluates the field and beam intensity correlations.
//!
//! Units: `hbar = k_B = 1`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod correlations;
pub mod error;
pub mod fock;
pub mod master;
pub mod reversal;
pub mod trajectory;

pub use collision::{
    AncillaState, ArrivalConvention, KrausSet, RenewalProcess, WaitingTimeDistribution,
};
pub use error::{Error, Result};
pub use fock::{DensityMatrix, FockOperator, Superoperator, TruncationConfig, C64};
pub use master::MicromaserParams;
pub use reversal::{DualChannelMap, DualVariant, EntropyFlows};
pub use trajectory::{ChannelLabel, ChannelSet, Jump, TrajectoryRecord};
