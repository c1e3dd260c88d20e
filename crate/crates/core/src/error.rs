use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("refused: {0}")]
    Refused(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
