use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("angle undefined for a zero-norm vector")]
    DegenerateAngle,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid label encoding: {0}")]
    InvalidLabel(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("need at least {needed} checkpoints, trace has {got}")]
    TooFewCheckpoints { needed: usize, got: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Parse failures for the IDX image/label container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {file} payload: expected {expected} bytes, found {found}")]
    Truncated {
        file: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
}
