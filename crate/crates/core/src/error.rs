use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Every regime likelihood ratio vanished (or overflowed) at this emission.
    #[error("numerical degeneracy at step {step}: normalization constant is {scale}")]
    NumericalDegeneracy { step: usize, scale: f64 },

    #[error("estimation degenerate: {0}")]
    EstimationDegenerate(String),

    #[error("instance too large for path enumeration: {paths} paths exceeds {limit}")]
    InstanceTooLarge { paths: u128, limit: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalDegeneracy { .. } | Error::EstimationDegenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
