//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code convention: 2 for bad inputs, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation { .. } | Error::Dimension(_) | Error::Invalid(_) => 2,
            Error::Divergence(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
