//! Per-task evaluation of generation transcripts into a metric report.

use std::fmt::Write as _;

use molmm_data::{parse_property_answer, parse_smiles_answer, PropertyValues, Task};
use serde::{Deserialize, Serialize};

use crate::bootstrap::bootstrap_se;
use crate::molecules::{parse_molecule, MoleculeSet, MoleculeSetMetrics, PreparedSet};
use crate::regression::{pearson, regression_metrics, RegressionEval};
use crate::text::{bleu_n, meteor, rouge_l, rouge_n, tokenize, RougeMode};

/// One generated answer next to its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub task: Task,
    /// Reference answer text; for property2img the request holding the
    /// target properties.
    pub reference: String,
    /// Generated answer text.
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_smiles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_smiles: Option<String>,
    /// Molecule read back from a generated image, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_smiles: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub task: Task,
    pub name: String,
    pub value: f64,
    /// Records the value was computed over.
    pub n: usize,
    pub std_error: Option<f64>,
}

/// Documented value range of a metric by name.
pub fn metric_range(name: &str) -> (f64, f64) {
    if name.ends_with("_pearson") {
        (-1.0, 1.0)
    } else if name.ends_with("_mse") || name.ends_with("_mae") {
        (0.0, f64::INFINITY)
    } else if name == "increased_logp" {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        (0.0, 1.0)
    }
}

impl Metric {
    pub fn in_range(&self) -> bool {
        let (lo, hi) = metric_range(&self.name);
        self.value >= lo && self.value <= hi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resamples: crate::bootstrap::DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

impl MetricReport {
    pub fn get(&self, task: Task, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.task == task && m.name == name)
    }

    pub fn to_jsonl(&self) -> String {
        self.metrics.iter().map(|m| serde_json::to_string(m).unwrap() + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<MetricReport, serde_json::Error> {
        let metrics = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(MetricReport { metrics })
    }

    /// Fixed-width plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<14} {:<16} {:>12} {:>10} {:>6}\n", "task", "metric", "value", "std_err", "n");
        for m in &self.metrics {
            let se = m.std_error.map_or("-".to_string(), |e| format!("{e:.4}"));
            writeln!(s, "{:<14} {:<16} {:>12.4} {:>10} {:>6}", m.task.name(), m.name, m.value, se, m.n).unwrap();
        }
        s
    }
}

const PROPS: [&str; 7] = ["mw", "logp", "tpsa", "hbd", "hba", "rb", "qed"];

fn prop(p: &PropertyValues, k: usize) -> f64 {
    match k {
        0 => p.mw,
        1 => p.logp,
        2 => p.tpsa,
        3 => p.hbd as f64,
        4 => p.hba as f64,
        5 => p.rb as f64,
        _ => p.qed,
    }
}

struct Builder<'a> {
    task: Task,
    cfg: &'a EvalConfig,
    out: &'a mut Vec<Metric>,
}

impl Builder<'_> {
    fn push(&mut self, name: &str, n: usize, value: Option<f64>, stat: impl FnMut(&[usize]) -> Option<f64>) {
        let Some(value) = value else { return };
        // each metric gets its own stream so adding one does not shift the others
        let seed = self.cfg.seed ^ fnv(self.task.name()) ^ fnv(name).rotate_left(17);
        let std_error = bootstrap_se(n, self.cfg.resamples, seed, stat);
        self.out.push(Metric {
            task: self.task,
            name: name.to_string(),
            value,
            n,
            std_error,
        });
    }

    /// Mean of per-record scores.
    fn push_mean(&mut self, name: &str, scores: &[f64]) {
        let mean = |idx: &[usize]| (!idx.is_empty()).then(|| idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64);
        let all: Vec<usize> = (0..scores.len()).collect();
        self.push(name, scores.len(), mean(&all), mean);
    }

    fn push_regression(&mut self, pairs: &[RegressionEval; 7]) {
        for (k, e) in pairs.iter().enumerate() {
            let Some(m) = regression_metrics(e) else { continue };
            let n = e.n();
            self.push(&format!("{}_mse", PROPS[k]), n, Some(m.mse), |idx| regression_metrics(&e.subset(idx)).map(|m| m.mse));
            self.push(&format!("{}_mae", PROPS[k]), n, Some(m.mae), |idx| regression_metrics(&e.subset(idx)).map(|m| m.mae));
            self.push(&format!("{}_pearson", PROPS[k]), n, m.pearson, |idx| pearson(&e.subset(idx)));
        }
    }

    fn push_set(&mut self, set: &PreparedSet, pick: impl Fn(&MoleculeSetMetrics) -> Option<f64>, name: &str) {
        let all: Vec<usize> = (0..set.len()).collect();
        let value = pick(&set.metrics(&all));
        self.push(name, set.len(), value, |idx| pick(&set.metrics(idx)));
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Evaluates every task present in `records`. `train` lists training-set
/// SMILES for novelty. Tasks appear in their fixed order; metric order
/// within a task is fixed.
pub fn evaluate(records: &[EvalRecord], train: &[String], cfg: &EvalConfig) -> MetricReport {
    let mut metrics = Vec::new();
    for task in Task::ALL {
        let recs: Vec<&EvalRecord> = records.iter().filter(|r| r.task == task).collect();
        if recs.is_empty() {
            continue;
        }
        let mut b = Builder { task, cfg, out: &mut metrics };
        match task {
            Task::Img2Caption => caption_metrics(&mut b, &recs),
            Task::Img2Property => property_metrics(&mut b, &recs),
            Task::Img2Smiles => smiles_metrics(&mut b, &recs, train),
            Task::Property2Img => drawing_metrics(&mut b, &recs),
            Task::Img2Img => optimization_metrics(&mut b, &recs, train),
        }
    }
    MetricReport { metrics }
}

fn caption_metrics(b: &mut Builder, recs: &[&EvalRecord]) {
    let mut scores: [Vec<f64>; 6] = Default::default();
    for r in recs {
        let (c, rf) = (tokenize(&r.output), tokenize(&r.reference));
        if rf.is_empty() {
            continue;
        }
        // an empty candidate scores zero everywhere
        scores[0].push(bleu_n(&c, &[&rf], 2).unwrap_or(0.0));
        scores[1].push(bleu_n(&c, &[&rf], 4).unwrap_or(0.0));
        scores[2].push(rouge_n(&c, &rf, 1, RougeMode::Recall).unwrap_or(0.0));
        scores[3].push(rouge_n(&c, &rf, 2, RougeMode::Recall).unwrap_or(0.0));
        scores[4].push(rouge_l(&c, &rf).unwrap_or(0.0));
        scores[5].push(meteor(&c, &rf));
    }
    for (name, s) in ["bleu2", "bleu4", "rouge1", "rouge2", "rougeL", "meteor"].iter().zip(&scores) {
        b.push_mean(name, s);
    }
}

fn valid_rate(b: &mut Builder, ok: &[f64]) {
    b.push_mean("valid_rate", ok);
}

fn property_metrics(b: &mut Builder, recs: &[&EvalRecord]) {
    let mut pairs: [RegressionEval; 7] = Default::default();
    let mut ok = Vec::new();
    for r in recs {
        let (Some(truth), out) = (parse_property_answer(&r.reference), parse_property_answer(&r.output)) else { continue };
        ok.push(f64::from(u8::from(out.is_some())));
        if let Some(p) = out {
            for (k, e) in pairs.iter_mut().enumerate() {
                e.push(prop(&truth, k), prop(&p, k));
            }
        }
    }
    valid_rate(b, &ok);
    b.push_regression(&pairs);
}

fn smiles_metrics(b: &mut Builder, recs: &[&EvalRecord], train: &[String]) {
    let generated: Vec<Option<String>> = recs.iter().map(|r| parse_smiles_answer(&r.output)).collect();
    let refs: Vec<String> = recs
        .iter()
        .map(|r| r.reference_smiles.clone().or_else(|| parse_smiles_answer(&r.reference)).unwrap_or_default())
        .collect();
    let set = PreparedSet::new(&MoleculeSet {
        generated: &generated,
        references: Some(&refs),
        sources: None,
        train,
    });
    b.push_set(&set, |m| Some(m.valid_rate), "valid_rate");
    b.push_set(&set, |m| m.accuracy, "accuracy");
    b.push_set(&set, |m| m.avg_tanimoto, "avg_tanimoto");
}

fn drawing_metrics(b: &mut Builder, recs: &[&EvalRecord]) {
    let mut pairs: [RegressionEval; 7] = Default::default();
    let mut ok = Vec::new();
    for r in recs {
        let Some(truth) = parse_property_answer(&r.reference) else { continue };
        let got = r
            .output_smiles
            .as_deref()
            .and_then(|s| molmm_chem::parse_smiles(s).ok())
            .and_then(|m| molmm_chem::compute_properties(&m).ok())
            .map(|p| PropertyValues::from(&p));
        ok.push(f64::from(u8::from(got.is_some())));
        if let Some(p) = got {
            for (k, e) in pairs.iter_mut().enumerate() {
                e.push(prop(&truth, k), prop(&p, k));
            }
        }
    }
    valid_rate(b, &ok);
    b.push_regression(&pairs);
}

fn optimization_metrics(b: &mut Builder, recs: &[&EvalRecord], train: &[String]) {
    let generated: Vec<Option<String>> = recs
        .iter()
        .map(|r| r.output_smiles.clone().filter(|s| parse_molecule(s).is_some()))
        .collect();
    let sources: Vec<String> = recs.iter().map(|r| r.source_smiles.clone().unwrap_or_default()).collect();
    let set = PreparedSet::new(&MoleculeSet {
        generated: &generated,
        // similarity is measured against the input molecule
        references: Some(&sources),
        sources: Some(&sources),
        train,
    });
    b.push_set(&set, |m| Some(m.valid_rate), "valid_rate");
    b.push_set(&set, |m| m.increased_logp, "increased_logp");
    b.push_set(&set, |m| m.avg_tanimoto, "avg_tanimoto");
    b.push_set(&set, |m| m.diversity, "diversity");
    b.push_set(&set, |m| m.novelty, "novelty");
}
