use std::path::PathBuf;

/// Errors produced by the library. The CLI maps each variant onto an exit code
/// class via [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown class id {0}")]
    UnknownClass(u8),

    #[error("could not place shape after {tries} attempts")]
    Placement { tries: usize },

    #[error("negative sampling exhausted after {tries} tries (best semantic difference {best:.4}, gate {gate:.4})")]
    SamplingExhausted { tries: usize, best: f64, gate: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Training,
    Internal,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::UnknownClass(_)
            | Error::MissingCheckpoint(_)
            | Error::Format { .. }
            | Error::UndefinedMetric(_) => ErrorKind::Input,
            Error::Training(_) | Error::SamplingExhausted { .. } | Error::Placement { .. } => {
                ErrorKind::Training
            }
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorKind::Input,
            Error::Io { .. } => ErrorKind::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
