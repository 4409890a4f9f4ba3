//! A small rotary-position transformer trained on unified token sequences,
//! with decoding that respects image-span structure.

pub mod config;
pub mod generate;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{LmConfig, LossSpan};
pub use generate::{generate, Constraint, Sampler, Transcript};
pub use loss::{lm_loss, LmLoss};
pub use model::LmModel;
pub use train::{evaluate_ce, train_lm, train_lm_with, Example, LmTrainReport, StepLoss};

use molmm_core::checkpoint::CheckpointError;
use molmm_core::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds context {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("no training examples")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
