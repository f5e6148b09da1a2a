use std::path::PathBuf;

use thiserror::Error;

/// CLI failure, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or a required input that does not exist (exit 2).
    #[error("{0}")]
    Usage(String),
    #[error("{what} not found: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    /// Failure while running (exit 1).
    #[error(transparent)]
    Runtime(#[from] skullcut_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Missing { .. } => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
