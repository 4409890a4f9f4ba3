use serde::{Deserialize, Serialize};

use crate::error::VqError;

/// Architecture and training knobs. Defaults are desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqConfig {
    pub resolution: usize,
    /// Channel width after each stride-2 stage; its length sets the downsampling.
    pub channels: Vec<usize>,
    pub n_codes: usize,
    pub code_dim: usize,
    pub disc_channels: usize,
    pub percep_channels: usize,
    pub lambda1: f64,
    pub commit_weight: f64,
    pub delta: f64,
    pub lambda2_max: f64,
    pub steps: usize,
    /// Fraction of `steps` after which the adversarial term switches on.
    pub gan_start_frac: f64,
    pub percep_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub val_frac: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            resolution: 64,
            channels: vec![32, 64, 64],
            n_codes: 256,
            code_dim: 16,
            disc_channels: 16,
            percep_channels: 16,
            lambda1: 1.0,
            commit_weight: 1.0,
            delta: 1e-6,
            lambda2_max: 1e4,
            steps: 1500,
            gan_start_frac: 0.6,
            percep_steps: 200,
            batch_size: 16,
            lr: 1e-3,
            disc_lr: 2e-4,
            val_frac: 0.1,
            eval_every: 250,
            seed: 0,
        }
    }
}

impl VqConfig {
    pub fn downsample(&self) -> usize {
        1 << self.channels.len()
    }

    /// Side of the token grid.
    pub fn grid(&self) -> usize {
        self.resolution / self.downsample()
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn gan_start_step(&self) -> usize {
        (self.steps as f64 * self.gan_start_frac).round() as usize
    }

    pub fn validate(&self) -> Result<(), VqError> {
        let bad = |m: &str| Err(VqError::Config(m.to_string()));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be non-empty and positive");
        }
        if self.resolution == 0 || self.resolution % self.downsample() != 0 {
            return bad("resolution must be a multiple of the downsampling factor");
        }
        if self.n_codes < 2 || self.code_dim == 0 {
            return bad("need at least 2 codes of positive width");
        }
        if self.batch_size == 0 || self.disc_channels == 0 || self.percep_channels == 0 {
            return bad("batch size and widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.gan_start_frac) || !(0.0..1.0).contains(&self.val_frac) {
            return bad("fractions out of range");
        }
        if self.resolution < 16 {
            return bad("resolution below 16");
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0 && self.delta > 0.0 && self.lambda1 >= 0.0) {
            return bad("learning rates and delta must be positive");
        }
        Ok(())
    }
}
