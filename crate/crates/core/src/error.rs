use thiserror::Error;

/// Errors shared by every subsystem in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// An operation needs unary scores but the bundle carries none.
    #[error("unary scores required but absent")]
    MissingUnaries,
    /// A sampler could not satisfy its constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// An instance exceeds a hard size cap (e.g. exact enumeration).
    #[error("instance too large: {0}")]
    TooLarge(String),
    /// A numeric computation failed (collapse, non-finite values, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A serialized artifact is malformed or inconsistent.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
