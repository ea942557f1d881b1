//! Crate-wide error type.
//!
//! Library code never panics on bad input: every fallible operation returns
//! [`Error`], and the CLI maps the variants onto process exit codes.

use thiserror::Error;

/// Unified error for configuration, shape, numeric, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two containers that must agree in length do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input value is outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric routine produced a NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A serialized artifact (JSONL line, checkpoint, CSV) failed validation.
    #[error("malformed input at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a [`Error::Malformed`] with a formatted location.
    pub fn malformed(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed {
            location: location.into(),
            message: message.into(),
        }
    }
}
