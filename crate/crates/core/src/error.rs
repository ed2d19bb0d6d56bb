use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by a model oracle. Each kind is distinct so that callers
/// can tell a transport problem from a protocol violation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle request timed out")]
    Timeout,
    #[error("malformed oracle payload: {0}")]
    Malformed(String),
    #[error("oracle shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("oracle returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("oracle transport failure: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid tile grid: {0}")]
    InvalidGrid(String),
    #[error("query budget of {limit} exhausted")]
    BudgetExhausted { limit: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("training failed: {0}")]
    Training(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: usize, actual: usize) -> Self {
        Error::Shape { expected, actual }
    }
}
