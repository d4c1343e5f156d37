use thiserror::Error;

/// Errors raised by the top-k primitives, losses, and experiment machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("score vector needs at least 2 entries, got {0}")]
    TooFewClasses(usize),

    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("rank {rank} out of range 1..={len}")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("k = {k} out of range for M = {m} (need {min} <= k <= {max})")]
    KOutOfRange {
        k: usize,
        m: usize,
        min: usize,
        max: usize,
    },

    #[error("class {label} out of range for M = {m}")]
    LabelOutOfRange { label: usize, m: usize },

    #[error("tie-break policy {0} requires a label")]
    MissingLabel(&'static str),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),

    #[error("zero entry in conditional distribution at index {0}")]
    ZeroProbability(usize),

    #[error("entry {value} at index {index} outside the potential's domain")]
    DomainViolation { index: usize, value: f64 },

    #[error("non-finite objective encountered: {0}")]
    NonFiniteObjective(String),

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("rejection budget of {budget} draws exhausted after accepting {accepted} of {wanted} means")]
    BudgetExhausted {
        budget: usize,
        accepted: usize,
        wanted: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
