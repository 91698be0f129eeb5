use thiserror::Error;

/// Failure modes shared by every module in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied something outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),
    /// A factorization or decomposition could not be completed.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// The operation is defined, but not under the regime the caller is in.
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
