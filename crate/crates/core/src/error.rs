use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: wrong magic 0x{found:08x} (expected 0x{expected:08x})", path.display())]
    WrongMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{}: truncated payload ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{}: bad record length {len} (not a multiple of {record})", path.display())]
    BadRecordLength {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("{}: label {label} out of range at record {record}", path.display())]
    BadLabel {
        path: PathBuf,
        label: u8,
        record: usize,
    },

    #[error("non-finite loss {loss} at iteration {iteration} (lr {lr})")]
    NonFiniteLoss { iteration: u64, lr: f64, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by malformed or missing input data files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::WrongMagic { .. }
                | Error::Truncated { .. }
                | Error::CountMismatch { .. }
                | Error::BadRecordLength { .. }
                | Error::BadLabel { .. }
                | Error::Io { .. }
        )
    }
}
