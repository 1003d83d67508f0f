use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] ndautograd::Error),
    #[error("expected {expected} parameters, got {actual}")]
    Partition { expected: usize, actual: usize },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Dimension(String),
    #[error("{0}")]
    Planning(String),
    #[error("{0}")]
    Assembly(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Dataset(String),
    #[error("{}: {detail}", path.display())]
    Image { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Partition { .. } => "partition",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::Dimension(_) => "dimension",
            Error::Planning(_) => "planning",
            Error::Assembly(_) => "assembly",
            Error::Training(_) => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Dataset(_) => "dataset",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
