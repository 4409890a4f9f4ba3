use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::record::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Rendered image side in pixels.
    pub resolution: usize,
    pub seed: u64,
    /// Train molecules per test molecule.
    pub train_per_test: usize,
    /// Captions longer than this many words are dropped.
    pub caption_max_words: usize,
    /// Minimum LogP gain of a synthesized img2img target.
    pub pair_min_delta: f64,
    /// Substitution attempts per source molecule.
    pub pair_attempts: usize,
    /// Prefix img2img prompts with the LogP explanation.
    pub logp_preamble: bool,
    /// Replace each train record by its four rotations.
    pub rotate_train: bool,
    /// Use only the first N corpus lines; 0 means all.
    pub max_molecules: usize,
    pub tasks: Vec<Task>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            resolution: 64,
            seed: 0,
            train_per_test: 40,
            caption_max_words: 150,
            pair_min_delta: 0.5,
            pair_attempts: 20,
            logp_preamble: true,
            rotate_train: false,
            max_molecules: 0,
            tasks: Task::ALL.to_vec(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.resolution < 8 {
            return bad("resolution must be at least 8");
        }
        if self.train_per_test == 0 {
            return bad("train_per_test must be positive");
        }
        if self.pair_min_delta.is_nan() || self.pair_min_delta < 0.0 {
            return bad("pair_min_delta must be non-negative");
        }
        if self.tasks.is_empty() {
            return bad("no tasks selected");
        }
        Ok(())
    }

    pub fn wants(&self, t: Task) -> bool {
        self.tasks.contains(&t)
    }
}
