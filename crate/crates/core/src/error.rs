use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A function argument is outside its domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A simulation or receiver setting is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input record does not satisfy the operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed configuration or trace text.
    #[error("parse error for `{key}`: {reason}")]
    Parse { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
