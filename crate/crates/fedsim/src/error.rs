//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto stable exit codes:
//! configuration problems exit with 1, data/format problems with 2 and
//! everything else with 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameter, malformed probability
    /// vector, inconsistent experiment sections).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation (empty input, count out of range).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor/parameter dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed dataset file; the message names the offending device
    /// where one exists.
    #[error("format error: {0}")]
    Format(String),

    /// Malformed experiment record.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Non-finite value produced where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("round error: {0}")]
    Round(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 success, 1 config error,
    /// 2 data error, 3 runtime error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 1,
            Error::Format(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => 2,
            _ => 3,
        }
    }
}
