use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input (bad trajectory, empty point set).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation's precondition on model state was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Stream elements out of temporal order.
    #[error("ordering violation: {0}")]
    Ordering(String),

    #[error("label {0} was never issued")]
    NotFound(u64),

    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
