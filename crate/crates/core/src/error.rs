use thiserror::Error;

/// Errors raised by the channel toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension {dim} exceeds the maximum composite dimension {max}")]
    Size { dim: usize, max: usize },

    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("eigen-solver failed to converge (residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
