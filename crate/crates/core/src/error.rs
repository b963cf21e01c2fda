use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate thread id `{0}`")]
    DuplicateThread(String),

    #[error("invalid thread `{id}`: {msg}")]
    InvalidThread { id: String, msg: String },

    #[error("unknown thread id `{0}`")]
    UnknownThread(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("conflicting labels for thread `{id}`: `{first}` vs `{second}`")]
    ConflictingLabel {
        id: String,
        first: String,
        second: String,
    },

    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("thread `{0}` has no in-vocabulary tokens")]
    Unprojectable(String),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class `{0}` has no in-vocabulary defining words")]
    EmptyClass(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable tag used by the CLI in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateThread(_) => "duplicate_thread",
            Error::InvalidThread { .. } => "invalid_thread",
            Error::UnknownThread(_) => "unknown_thread",
            Error::UnknownClass(_) => "unknown_class",
            Error::ConflictingLabel { .. } => "conflicting_label",
            Error::OutOfVocabulary(_) => "out_of_vocabulary",
            Error::Unprojectable(_) => "unprojectable",
            Error::ZeroNorm(_) => "zero_norm",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyClass(_) => "empty_class",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Format(_) => "format",
        }
    }
}
