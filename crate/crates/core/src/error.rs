use thiserror::Error;

pub type Result<T> = std::result::Result<T, OvqError>;

#[derive(Debug, Error)]
pub enum OvqError {
    /// Bad shapes, out-of-range parameters, inconsistent options.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// EM components that received zero total responsibility.
    #[error("degenerate mixture components: {0:?}")]
    DegenerateComponents(Vec<usize>),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OvqError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        OvqError::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        OvqError::Parse {
            line,
            message: msg.into(),
        }
    }
}
