//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the quantized matrix completion library.
#[derive(Debug, Error)]
pub enum QmcError {
    /// A quantization scheme failed its construction invariants.
    #[error("invalid quantization scheme: {0}")]
    InvalidScheme(String),

    /// An index (level, row, column) was out of range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// An input value or parameter lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numerical routine (SVD, eigendecomposition) failed or produced
    /// non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The gradient descent iterates diverged; the step size is too large.
    #[error("step size mu={mu} too large: {reason}")]
    StepSize { mu: f64, reason: String },

    /// A precondition of a theoretical bound does not hold for the inputs.
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// A problem instance exceeds a hard size cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A parameter search exhausted its range without success.
    #[error("search failure: {0}")]
    SearchFailure(String),

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Parsed data violates a dataset invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QmcError>;
