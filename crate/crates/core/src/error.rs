use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {layer}")]
    Numeric { layer: String },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("out-of-order update: {0}")]
    Sequencing(String),

    #[error("not yet defined: {0}")]
    NotYetDefined(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
