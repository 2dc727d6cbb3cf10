use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: no samples found")]
    EmptyInput,

    #[error("degenerate targets: y is constant, cannot normalize max|y| to 1")]
    DegenerateTargets,

    #[error("degenerate bandwidth: all rows are identical")]
    DegenerateBandwidth,

    #[error("invalid split: n_train ({n_train}) + n_test ({n_test}) exceeds {available} rows")]
    InvalidSplit {
        n_train: usize,
        n_test: usize,
        available: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("angular kernel undefined for zero vector (row {row})")]
    ZeroVector { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("factorization failed; smallest eigenvalue of the system matrix is {smallest_eigenvalue:e}")]
    Factorization { smallest_eigenvalue: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("malformed binary blob: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
