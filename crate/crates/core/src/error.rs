use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("empty document reached the classifier")]
    EmptyDocument,

    #[error("empty {0} batch")]
    EmptyBatch(&'static str),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("label index {index} out of range for {count} labels")]
    LabelOutOfRange { index: usize, count: usize },

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot sample {requested} items from {available}")]
    Oversample { requested: usize, available: usize },

    #[error("dimension mismatch: {what} has dimension {found}, expected {expected}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("no reference output for parallel pair {0}")]
    MissingReference(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("variant {variant} resource check failed: {}", problems.join("; "))]
    Resources {
        variant: String,
        problems: Vec<String>,
    },

    #[error("archive: {0}")]
    Archive(String),

    #[error("synthetic generator: {0}")]
    Synthetic(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Errors caused by bad user input (configuration, resource matrix) rather
    /// than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Resources { .. })
    }
}
