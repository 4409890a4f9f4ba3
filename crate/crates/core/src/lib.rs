//! Dense tensors with reverse-mode automatic differentiation, the AdamW
//! optimizer and MFCK1 checkpoints.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState, AdamW};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;
