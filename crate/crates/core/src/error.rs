use autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
    #[error("input size {height}x{width} is not divisible by 32")]
    InputSize { height: usize, width: usize },
    #[error("expected {expected} aligned features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("class id {id} at pixel {index} is not below {classes}")]
    ClassId { id: u8, index: usize, classes: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("netpbm: {0}")]
    Netpbm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
