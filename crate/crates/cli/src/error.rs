use std::path::PathBuf;

use gateseg_core::Error as CoreError;
use thiserror::Error;

use crate::manifest::ManifestError;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Failures grouped by the exit code scripts branch on.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error("invalid argument: {0}")]
    Validation(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metric undefined under the selected policy: {0}")]
    MetricUndefined(String),

    #[error(transparent)]
    Core(CoreError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Manifest(_) | HarnessError::Validation(_) => 2,
            HarnessError::Data { .. } | HarnessError::Io { .. } => 3,
            HarnessError::MetricUndefined(_) => 4,
            HarnessError::Core(e) => match e {
                CoreError::UndefinedMetric(_) => 4,
                CoreError::Input(_) | CoreError::MissingProbability(_) => 2,
                _ => 3,
            },
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UndefinedMetric(msg) => HarnessError::MetricUndefined(msg),
            other => HarnessError::Core(other),
        }
    }
}
