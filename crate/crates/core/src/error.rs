use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at Fock level {level}")]
    NonFinite { level: usize },

    #[error("steady state is not unique: null space has dimension {0}")]
    DegenerateNullSpace(usize),

    #[error("generator residual {0:e} on the computed steady state exceeds 1e-10")]
    SteadyStateResidual(f64),

    #[error("truncation too small: population {mass:e} at n_max = {n_max} exceeds tail_tol {tail_tol:e}")]
    TailViolation { n_max: usize, mass: f64, tail_tol: f64 },

    #[error("vanishing denominator in the photon-number product at rung {0}")]
    VanishingDenominator(usize),

    #[error("singular superoperator (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("quadrature step {step:e} too coarse: must not exceed {limit:e}")]
    CoarseStep { step: f64, limit: f64 },

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("inconsistent trajectory record: {0}")]
    InconsistentRecord(String),

    #[error("steady-state population at level {0} is not strictly positive")]
    ZeroPopulation(usize),

    #[error("inverse temperature of the {0} is not finite; use the whole-steady-state dual instead")]
    InfiniteBeta(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
