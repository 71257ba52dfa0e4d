use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violates the documented preconditions of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced a non-finite value or failed to converge.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// A solver reached a state that should be impossible for valid input.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
