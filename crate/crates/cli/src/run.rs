//! Run-directory layout and the lock that serializes commands on it.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.toml")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn train_records(&self) -> PathBuf {
        self.data().join(molmm_data::record::TRAIN_FILE)
    }
    pub fn bpe_vocab(&self) -> PathBuf {
        self.root.join("bpe").join("vocab.txt")
    }
    pub fn vq_checkpoint(&self) -> PathBuf {
        self.root.join("vq").join("generator.ckpt")
    }
    pub fn vq_report(&self) -> PathBuf {
        self.root.join("vq").join("report.json")
    }
    pub fn vq_tokens(&self) -> PathBuf {
        self.root.join("vq").join("tokens.jsonl")
    }
    pub fn lm_checkpoint(&self) -> PathBuf {
        self.root.join("lm").join("model.ckpt")
    }
    pub fn lm_config(&self) -> PathBuf {
        self.root.join("lm").join("config.json")
    }
    pub fn lm_curve(&self) -> PathBuf {
        self.root.join("lm").join("curve.jsonl")
    }
    pub fn generations(&self) -> PathBuf {
        self.root.join("generate")
    }
    pub fn transcripts(&self) -> PathBuf {
        self.generations().join("transcripts.jsonl")
    }
    pub fn eval_records(&self) -> PathBuf {
        self.generations().join("eval_records.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("eval").join("metrics.jsonl")
    }
    pub fn metrics_table(&self) -> PathBuf {
        self.root.join("eval").join("metrics.txt")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    /// Takes the run lock; it is released when the guard drops.
    pub fn lock(&self) -> Result<RunLock, CliError> {
        fs::create_dir_all(&self.root).map_err(CliError::io(&self.root))?;
        let path = self.lock_path();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::io(&path)(e)),
        }
    }

    /// Errors with MissingUpstreamArtifact unless `path` exists.
    pub fn require(&self, path: &Path, command: &'static str, producer: &'static str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::MissingUpstreamArtifact {
                command,
                producer,
                artifact: path.to_path_buf(),
            })
        }
    }
}

#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(parent) => fs::create_dir_all(parent).map_err(CliError::io(parent)),
        None => Ok(()),
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

/// One JSON value per line.
pub fn to_jsonl<T: serde::Serialize>(items: &[T]) -> Result<String, CliError> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, CliError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}
