use thiserror::Error;

/// Failures raised while building or differentiating a graph.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl TensorError {
    pub fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Dimension { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
