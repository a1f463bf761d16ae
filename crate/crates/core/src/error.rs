use thiserror::Error;

/// Errors raised by the homogenization laboratory.
#[derive(Debug, Error)]
pub enum HomError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cell {cell} is not positive definite (smallest eigenvalue {lambda:e})")]
    NotPositiveDefinite { cell: usize, lambda: f64 },

    #[error("non-finite value at cell {cell}")]
    NonFinite { cell: usize },

    #[error("non-finite moment accumulation for model {model}")]
    NonFiniteMoment { model: String },

    #[error("degenerate face between cells {left} and {right}")]
    SingularFace { left: usize, right: usize },

    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("inconsistent discretization: {0}")]
    Inconsistent(String),

    #[error("rejected input: {0}")]
    Rejected(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HomError> = std::result::Result<T, E>;
