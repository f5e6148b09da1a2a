use std::path::PathBuf;

use skullcut_nn::NnError;
use thiserror::Error;

use crate::volume::Domain;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected {expected} intensity domain, got {actual}")]
    Domain { expected: Domain, actual: Domain },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
