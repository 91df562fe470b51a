use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("bad magic or version: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular normal equations in {0} step (try a larger regularizer)")]
    Singular(&'static str),

    #[error("non-finite loss at epoch {epoch} (parameter norm {param_norm:e})")]
    NonFiniteLoss { epoch: usize, param_norm: f64 },

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 input, 3 numeric, 4 format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile(_) | Error::InvalidInput(_) | Error::Io(_) => 2,
            Error::Singular(_) | Error::NonFiniteLoss { .. } => 3,
            Error::BadMagic { .. }
            | Error::Dimension(_)
            | Error::Format(_)
            | Error::Image(_)
            | Error::Json(_) => 4,
            Error::Frame { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn at_frame(self, index: usize) -> Error {
        Error::Frame {
            index,
            source: Box::new(self),
        }
    }
}
