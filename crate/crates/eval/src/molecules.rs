//! Metrics over sets of generated molecules.

use std::collections::BTreeSet;

use molmm_chem::{canonical_smiles, compute_properties, morgan_fingerprint, parse_smiles, tanimoto, Fingerprint};
use serde::{Deserialize, Serialize};

pub const FP_RADIUS: usize = 2;
pub const FP_BITS: usize = 2048;

/// A parsed output: canonical form, fingerprint and LogP when computable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMolecule {
    pub canonical: String,
    pub fingerprint: Fingerprint,
    pub logp: Option<f64>,
}

/// None for text that is not a valid SMILES.
pub fn parse_molecule(smiles: &str) -> Option<ParsedMolecule> {
    let m = parse_smiles(smiles).ok()?;
    if m.is_empty() {
        return None;
    }
    Some(ParsedMolecule {
        canonical: canonical_smiles(&m),
        fingerprint: morgan_fingerprint(&m, FP_RADIUS, FP_BITS).ok()?,
        logp: compute_properties(&m).ok().map(|p| p.logp),
    })
}

/// Inputs aligned by index: `generated[i]` is None when the answer did not
/// follow its template.
#[derive(Debug, Clone, Default)]
pub struct MoleculeSet<'a> {
    pub generated: &'a [Option<String>],
    /// Ground-truth molecule per output (accuracy, similarity).
    pub references: Option<&'a [String]>,
    /// Input molecule per output (LogP gain).
    pub sources: Option<&'a [String]>,
    pub train: &'a [String],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSetMetrics {
    pub n: usize,
    pub valid_rate: f64,
    pub accuracy: Option<f64>,
    pub avg_tanimoto: Option<f64>,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    pub increased_logp: Option<f64>,
}

/// Precomputed per-output data so resampling does not reparse.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub outputs: Vec<Option<ParsedMolecule>>,
    pub references: Option<Vec<Option<ParsedMolecule>>>,
    pub sources: Option<Vec<Option<ParsedMolecule>>>,
    pub train: BTreeSet<String>,
}

impl PreparedSet {
    pub fn new(s: &MoleculeSet) -> PreparedSet {
        let parse_all = |v: &[String]| v.iter().map(|x| parse_molecule(x)).collect::<Vec<_>>();
        PreparedSet {
            outputs: s.generated.iter().map(|g| g.as_deref().and_then(parse_molecule)).collect(),
            references: s.references.map(parse_all),
            sources: s.sources.map(parse_all),
            train: s.train.iter().filter_map(|t| parse_molecule(t)).map(|p| p.canonical).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Metrics over the outputs at `idx` (repeats allowed).
    ///
    /// Accuracy counts invalid outputs as misses; similarity, diversity,
    /// novelty and LogP gain use valid outputs only. Diversity is 0 when
    /// fewer than two distinct valid outputs exist.
    pub fn metrics(&self, idx: &[usize]) -> MoleculeSetMetrics {
        let n = idx.len();
        let valid: Vec<usize> = idx.iter().copied().filter(|&i| self.outputs[i].is_some()).collect();
        let out = |i: usize| self.outputs[i].as_ref().unwrap();
        let ratio = |k: usize, d: usize| (d > 0).then(|| k as f64 / d as f64);
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

        let accuracy = self.references.as_ref().and_then(|refs| {
            let hits = idx
                .iter()
                .filter(|&&i| matches!((&self.outputs[i], &refs[i]), (Some(o), Some(r)) if o.canonical == r.canonical))
                .count();
            ratio(hits, n)
        });
        let avg_tanimoto = self.references.as_ref().and_then(|refs| {
            mean(
                valid
                    .iter()
                    .filter_map(|&i| refs[i].as_ref().map(|r| tanimoto(&out(i).fingerprint, &r.fingerprint).unwrap()))
                    .collect(),
            )
        });
        let mut unique: Vec<&ParsedMolecule> = Vec::new();
        let mut seen = BTreeSet::new();
        for &i in &valid {
            if seen.insert(out(i).canonical.as_str()) {
                unique.push(out(i));
            }
        }
        let diversity = (!unique.is_empty()).then(|| {
            if unique.len() < 2 {
                return 0.0;
            }
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..unique.len() {
                for b in a + 1..unique.len() {
                    sum += tanimoto(&unique[a].fingerprint, &unique[b].fingerprint).unwrap();
                    pairs += 1;
                }
            }
            1.0 - sum / pairs as f64
        });
        let novelty = ratio(unique.iter().filter(|u| !self.train.contains(&u.canonical)).count(), unique.len());
        let increased_logp = self.sources.as_ref().and_then(|src| {
            mean(
                valid
                    .iter()
                    .filter_map(|&i| Some(out(i).logp? - src[i].as_ref()?.logp?))
                    .collect(),
            )
        });
        MoleculeSetMetrics {
            n,
            valid_rate: ratio(valid.len(), n).unwrap_or(0.0),
            accuracy,
            avg_tanimoto,
            diversity,
            novelty,
            increased_logp,
        }
    }
}

pub fn molecule_set_metrics(s: &MoleculeSet) -> MoleculeSetMetrics {
    let p = PreparedSet::new(s);
    p.metrics(&(0..p.len()).collect::<Vec<_>>())
}
