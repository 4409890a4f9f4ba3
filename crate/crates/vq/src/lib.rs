//! Image tokenizer: a VQ-GAN that maps 64×64 depictions to a grid of
//! codebook indices and back.

pub mod config;
pub mod error;
pub mod loss;
pub mod model;
pub mod quantize;
pub mod train;
pub mod vqmodel;

pub use config::VqConfig;
pub use error::VqError;
pub use loss::{adaptive_lambda2, gan_losses, perceptual_loss, vqvae_loss, VqLossReport, VqTerms};
pub use quantize::quantize;
pub use train::{codebook_usage, evaluate, train_vq, TrainReport, ValPoint};
pub use vqmodel::{read_token_dump, write_token_dump, Forward, TokenRecord, VqModel};
