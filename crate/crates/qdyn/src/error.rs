use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QdynError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content; `line` is 1-based, 0 when not line-oriented.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] qdyn_core::Error),
}

pub type Result<T> = std::result::Result<T, QdynError>;

impl QdynError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QdynError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        QdynError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use qdyn_core::Error as E;
        match self {
            QdynError::Usage(_) => 2,
            QdynError::Core(E::NonFiniteLoss { .. })
            | QdynError::Core(E::NonFinitePrediction { .. })
            | QdynError::Core(E::Integration { .. }) => 4,
            QdynError::Core(E::Config(_)) | QdynError::Core(E::ConfigMismatch { .. }) => 2,
            _ => 3,
        }
    }
}
