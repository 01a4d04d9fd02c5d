use thiserror::Error;

pub type Result<T> = std::result::Result<T, LutqError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutqError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("index {index} out of range for dictionary of size {size}")]
    Index { index: usize, size: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("fixed-point overflow: {0}")]
    Overflow(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LutqError {
    fn from(e: std::io::Error) -> Self {
        LutqError::Io(e.to_string())
    }
}
