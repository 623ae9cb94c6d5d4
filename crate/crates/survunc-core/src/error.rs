//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SurvError>;

#[derive(Debug, Error)]
pub enum SurvError {
    /// A malformed cell or row in an input CSV file. Row numbers are
    /// 1-based and count data rows (the header is row 0).
    #[error("csv error at row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model is not fitted")]
    NotFitted,

    #[error("{0}")]
    Unsupported(String),

    #[error("failed to converge: {0}")]
    Convergence(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
}

impl From<serde_json::Error> for SurvError {
    fn from(e: serde_json::Error) -> Self {
        SurvError::Serialization(e.to_string())
    }
}
