//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, off-manifold points, empty inputs.
    #[error("argument error: {0}")]
    Argument(String),

    /// A construction-time constraint was violated (e.g. an exponent out of range).
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// The operation needs a capability the inputs do not provide
    /// (e.g. a missing second-derivative closure).
    #[error("capability error: {0}")]
    Capability(String),

    /// A documented precondition of an operation does not hold for the inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Numerical failure at run time (singular system, …).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The SDE integrator rejected a step.
    #[error("integration error at t={t}: {msg}")]
    Integration { t: f64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
