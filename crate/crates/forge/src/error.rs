use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("{0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] bonsai_core::Error),
}

impl ForgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }

    /// Process exit code: 1 input or IO, 2 numeric, 3 format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numeric(_) | Self::Core(bonsai_core::Error::Numeric { .. }) => 2,
            Self::Format(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ForgeError>;
