use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{0}: no rows")]
    NoRows(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt trial store: {0}")]
    CorruptStore(String),

    #[error("enumeration needs {required} subsets, above the cap of {cap}")]
    EnumerationCap { required: u128, cap: u64 },

    #[error("training failed on trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (arguments, files, configs) rather
    /// than by a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::NoRows(_)
            | Error::Config(_)
            | Error::ShapeMismatch(_)
            | Error::CorruptStore(_)
            | Error::EnumerationCap { .. } => true,
            Error::Trial { .. }
            | Error::EmptyTrainingSet
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => false,
        }
    }
}
