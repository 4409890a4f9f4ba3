//! Run configuration: one TOML file of top-level keys and per-stage tables.

use std::path::{Path, PathBuf};

use molmm_data::{DataConfig, Task};
use molmm_eval::EvalConfig;
use molmm_lm::LmConfig;
use molmm_vq::VqConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// SMILES corpus, one molecule per line.
    pub corpus: PathBuf,
    /// SMILES<TAB>caption file.
    pub captions: Option<PathBuf>,
    /// Two SMILES per line, lower LogP first; img2img pairs are synthesized
    /// when absent.
    pub pairs: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: PathBuf::from("data/corpus_5k.smi"),
            captions: Some(PathBuf::from("data/captions.tsv")),
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeConfig {
    pub vocab_size: usize,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig { vocab_size: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// New-token budget per answer.
    pub max_new: usize,
    /// Test records per task to generate for; 0 means all.
    pub max_per_task: usize,
    /// 0 decodes greedily.
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            max_new: 200,
            max_per_task: 0,
            temperature: 0.0,
            top_k: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every stage before anything random happens.
    pub seed: u64,
    /// Image side in pixels for rendering and the image tokenizer.
    pub resolution: usize,
    /// Restricts curation, generation and evaluation to one task.
    pub task: Option<Task>,
    pub out: Option<PathBuf>,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub bpe: BpeConfig,
    pub vq: VqConfig,
    pub lm: LmConfig,
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            resolution: 64,
            task: None,
            out: None,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            bpe: BpeConfig::default(),
            vq: VqConfig::default(),
            lm: LmConfig::default(),
            generate: GenerateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies command-line overrides and propagates the shared settings
    /// (seed, resolution, task) into the stage tables.
    pub fn resolve(mut self, seed: Option<u64>, task: Option<Task>, out: Option<PathBuf>) -> RunConfig {
        if let Some(s) = seed {
            self.seed = s;
        }
        if task.is_some() {
            self.task = task;
        }
        if out.is_some() {
            self.out = out;
        }
        self.data.seed = self.seed;
        self.vq.seed = self.seed;
        self.lm.seed = self.seed;
        self.eval.seed = self.seed;
        self.data.resolution = self.resolution;
        self.vq.resolution = self.resolution;
        if let Some(t) = self.task {
            self.data.tasks = vec![t];
        }
        self
    }

    /// Checks stage settings.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        if self.out.is_none() {
            return bad("no output directory (set `out` or pass --out)".into());
        }
        self.data.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        self.vq.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        self.lm.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        if self.lm.context < self.vq.tokens_per_image() + 8 {
            return bad(format!("lm context {} cannot hold an image of {} tokens", self.lm.context, self.vq.tokens_per_image()));
        }
        if self.bpe.vocab_size < 256 + molmm_text::Special::ALL.len() {
            return bad(format!("bpe vocab_size {} cannot hold the byte and special tokens", self.bpe.vocab_size));
        }
        if !(self.generate.temperature >= 0.0) {
            return bad("generate temperature must be non-negative".into());
        }
        Ok(())
    }

    /// Checks that every input file curation reads exists.
    pub fn validate_inputs(&self) -> Result<(), CliError> {
        let mut files = vec![&self.paths.corpus];
        files.extend(self.paths.captions.iter());
        files.extend(self.paths.pairs.iter());
        for f in files {
            if !f.is_file() {
                return Err(CliError::ConfigInvalid(format!("input file {} does not exist", f.display())));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated config has an output directory")
    }
}
