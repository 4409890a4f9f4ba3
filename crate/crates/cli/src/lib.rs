//! The `molmm` pipeline: curation, tokenizer and model training,
//! generation, evaluation and reporting over one run directory.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod run;
pub mod sequences;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run, Command};
pub use run::RunDir;
