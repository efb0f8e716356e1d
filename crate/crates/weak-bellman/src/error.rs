//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural validation (shape, range, normalization).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Dimension mismatch between two objects that must agree.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// The constraint set has empty intersection. The payload is the
    /// smallest uniform slack that would restore feasibility.
    #[error("infeasible constraint set (smallest restoring slack {min_slack:.3e})")]
    Infeasible { min_slack: f64 },

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
