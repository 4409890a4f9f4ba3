use serde::{Deserialize, Serialize};

use crate::LmError;

/// Which target positions the loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSpan {
    /// answer tokens only
    Answer,
    /// every non-padding token
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
    /// Full vocabulary: text, specials and image tokens.
    pub vocab: usize,
    /// First image-token id; output rows from here on start at zero.
    pub image_start: usize,
    pub z_loss: f64,
    pub lr: f64,
    pub dropout: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub rope_base: f64,
    pub loss_span: LossSpan,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            layers: 4,
            dim: 128,
            heads: 4,
            context: 512,
            vocab: 517 + 256,
            image_start: 517,
            z_loss: 1e-5,
            lr: 2e-5,
            dropout: 0.05,
            warmup_frac: 0.01,
            weight_decay: 0.0,
            grad_clip: 1.0,
            batch_size: 8,
            steps: 1000,
            rope_base: 10_000.0,
            loss_span: LossSpan::Answer,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn warmup_steps(&self) -> usize {
        (self.steps as f64 * self.warmup_frac).ceil() as usize
    }

    /// Linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            self.lr * (step + 1) as f64 / w as f64
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::Config(m.to_string()));
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.context < 2 {
            return bad("layers, dim, heads must be positive and context at least 2");
        }
        if self.dim % self.heads != 0 || self.head_dim() % 2 != 0 {
            return bad("dim must split into heads of even width");
        }
        if self.vocab < 2 || self.image_start > self.vocab {
            return bad("image_start must lie within the vocabulary");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("dropout and warmup fractions out of range");
        }
        if self.lr <= 0.0 || self.batch_size == 0 || self.z_loss < 0.0 {
            return bad("lr and batch size must be positive, z-loss non-negative");
        }
        Ok(())
    }
}
