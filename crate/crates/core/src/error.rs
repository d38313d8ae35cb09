use std::path::PathBuf;

use cvit_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset manifest error for sample {id:?}: {msg}")]
    Manifest { id: String, msg: String },
    #[error("ingestion error for {path}: {msg}")]
    Ingest { path: PathBuf, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss at iteration {iter} on batch {batch:?}")]
    NonFiniteLoss { iter: usize, batch: Vec<String> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint config hash {found:#018x} does not match model config {expected:#018x}")]
    Incompatible { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
