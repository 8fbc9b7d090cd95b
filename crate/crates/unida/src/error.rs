use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value showed up where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A loss or gradient became non-finite during training.
    #[error("training diverged at iteration {iter} (epoch {epoch}): {msg}")]
    Divergence { iter: usize, epoch: usize, msg: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
