use std::path::PathBuf;

use drsnet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:.3e})")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
}

impl Error {
    /// Short machine-readable category used in one-line error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) | Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite { .. } => "numerical",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
