use thiserror::Error;

use crate::peleg::RunResult;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular: smallest pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("arm index {index} out of range for {arms} arms")]
    ArmOutOfRange { index: usize, arms: usize },

    #[error("no arm pair admits a feasible point inside the ball")]
    Infeasible,

    #[error("need at least two arms, got {0}")]
    TooFewArms(usize),

    /// A safety cap was hit. The partial result carries every completed
    /// phase plus the one in progress.
    #[error("run did not terminate: {reason}")]
    NonTermination {
        reason: String,
        partial: Box<RunResult>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
