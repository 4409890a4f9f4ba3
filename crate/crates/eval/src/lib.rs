//! Evaluation metrics for the molecule tasks: BLEU, ROUGE, METEOR, LCS,
//! regression errors, molecule-set statistics and bootstrap errors.

pub mod bootstrap;
pub mod error;
pub mod molecules;
pub mod regression;
pub mod report;
pub mod text;

pub use bootstrap::bootstrap_se;
pub use error::EvalError;
pub use molecules::{molecule_set_metrics, parse_molecule, MoleculeSet, MoleculeSetMetrics, ParsedMolecule, PreparedSet};
pub use regression::{pearson, regression_metrics, RegressionEval, RegressionMetrics};
pub use report::{evaluate, metric_range, EvalConfig, EvalRecord, Metric, MetricReport};
pub use text::{align, bleu_n, lcs_len, meteor, ngram_counts, rouge_l, rouge_n, tokenize, Alignment, RougeMode};

use molmm_data::PropertyValues;

/// The seven labeled values of an img2property answer.
pub fn parse_property_answer(text: &str) -> Result<PropertyValues, EvalError> {
    molmm_data::parse_property_answer(text).ok_or_else(|| EvalError::MalformedAnswer(text.to_string()))
}

/// The SMILES following the img2smiles answer marker.
pub fn parse_smiles_answer(text: &str) -> Result<String, EvalError> {
    molmm_data::parse_smiles_answer(text).ok_or_else(|| EvalError::MalformedAnswer(text.to_string()))
}
