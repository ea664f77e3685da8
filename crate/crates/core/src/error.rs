use std::path::PathBuf;

use thiserror::Error;

use crate::io::{CheckpointError, ImageError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("input extent {height}x{width} is not divisible by 8; pad the frame before the forward pass")]
    Indivisible { height: usize, width: usize },
    #[error("sequence too short: need at least {required} frames, got {got}")]
    SequenceTooShort { required: usize, got: usize },
    #[error("no model: {0}")]
    NoModel(String),
    #[error("non-finite training loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
