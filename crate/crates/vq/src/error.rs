use molmm_core::checkpoint::CheckpointError;
use molmm_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("code width {got} does not match codebook width {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("token {index} outside codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("expected {expected} tokens, got {got}")]
    TokenCount { expected: usize, got: usize },
    #[error("image is {width}x{height}, model expects {resolution}x{resolution}")]
    ImageSize { width: usize, height: usize, resolution: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
