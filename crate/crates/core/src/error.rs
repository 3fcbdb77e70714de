use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid needs at least {min} points per axis for this stencil, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigendecomposition did not converge")]
    EigenNoConvergence,
    #[error("dense eigensolve limited to {ceiling} points, operator has {size}")]
    CeilingExceeded { size: usize, ceiling: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("grid of {0} points per axis is not dyadic")]
    NotDyadic(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
