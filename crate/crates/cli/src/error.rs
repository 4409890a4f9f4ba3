use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{command} needs {} (run {producer} first)", artifact.display())]
    MissingUpstreamArtifact {
        command: &'static str,
        producer: &'static str,
        artifact: PathBuf,
    },
    #[error("run directory is locked by another command ({})", .0.display())]
    Locked(PathBuf),
    #[error(transparent)]
    Data(#[from] molmm_data::DataError),
    #[error(transparent)]
    Vq(#[from] molmm_vq::VqError),
    #[error(transparent)]
    Text(#[from] molmm_text::TextError),
    #[error(transparent)]
    Lm(#[from] molmm_lm::LmError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for a missing earlier stage, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::MissingUpstreamArtifact { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
