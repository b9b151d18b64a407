use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible stream at task {task}: {reason}")]
    InfeasibleStream { task: usize, reason: String },

    #[error("{path}: row {row}: {reason}")]
    Csv {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("all {0} features were removed by the variance filter")]
    AllFeaturesDropped(usize),

    #[error("label {label} is not an active output class")]
    InactiveLabel { label: usize },

    #[error("layer index {index} out of range (model has {hidden} hidden layers)")]
    LayerOutOfRange { index: usize, hidden: usize },

    #[error("task {task}: {source}")]
    AtTask {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn at_task(self, task: usize) -> Self {
        Error::AtTask {
            task,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
