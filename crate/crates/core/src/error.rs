use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum LscError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LscError>;
