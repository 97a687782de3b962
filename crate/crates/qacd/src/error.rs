//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the qacd library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine (root finder, optimizer) failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// The observed information matrix is not positive definite.
    #[error("observed information is singular (condition number {condition:.3e}): {context}")]
    Singular { condition: f64, context: String },

    /// A recursion produced values beyond the representable range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// A requested moment or moment generating function does not exist.
    #[error("moment does not exist: {0}")]
    NonExistence(String),

    /// Not enough data to carry out the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A file could not be parsed; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
