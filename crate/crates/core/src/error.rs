use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where a formula is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Two arguments were passed in the wrong order (e.g. `lambda_i <= lambda_j`).
    #[error("argument order: {0}")]
    ArgumentOrder(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A bound denominator vanished because the MED difference vector has no
    /// energy on powered sub-channels.
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
