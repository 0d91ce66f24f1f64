use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the IO layer and the command-line driver.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] mponet_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 usage, 2 format, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        use mponet_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Format { .. } | CliError::Io { .. } => 2,
            CliError::Core(E::Divergence { .. }) => 3,
            CliError::Core(E::Usage(_) | E::Structure(_) | E::Capacity { .. }) => 1,
            CliError::Core(_) => 2,
        }
    }
}
