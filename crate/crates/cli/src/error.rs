use lutq_core::LutqError;
use thiserror::Error;

/// Failure of a CLI command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, flag or architecture file (exit 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Unreadable or malformed model artifact (exit 3).
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    /// Request that violates a kernel or quantizer contract (exit 4).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{0}")]
    Core(LutqError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Corrupt(_) => 3,
            CliError::Contract(_) => 4,
            CliError::Core(LutqError::Contract(_)) => 4,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<LutqError> for CliError {
    fn from(e: LutqError) -> Self {
        match e {
            LutqError::Contract(m) => CliError::Contract(m),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
