use std::io;
use std::path::Path;

use kd_core::KdError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] KdError),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    /// 2 for anything the user can fix in the invocation or config, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
