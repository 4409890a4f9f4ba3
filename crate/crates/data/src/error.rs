use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid SMILES {smiles:?}: {reason}")]
    Smiles { smiles: String, reason: String },
    #[error("properties of {smiles:?}: {reason}")]
    Props { smiles: String, reason: String },
    #[error("render failed: {0}")]
    Render(String),
    #[error("pair does not raise LogP: {source_logp} -> {target_logp}")]
    PairOrder { source_logp: f64, target_logp: f64 },
    #[error("no usable molecules in the corpus")]
    EmptyCorpus,
    #[error("image {0} is not in the dataset")]
    MissingImage(String),
    #[error("record {id}: {reason}")]
    Integrity { id: String, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
