//! Oracle comparisons shared by the metric tests and the acceptance run.
//! Each returns the number of cases checked and a description of every
//! mismatch.

use molmm_data::Task;
use molmm_eval::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;

pub fn words(t: &[u32]) -> Vec<String> {
    t.iter().map(|x| format!("w{x}")).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Every candidate/reference pair with at most `max_total` tokens in
/// total, up to renaming of tokens.
pub fn for_each_case(max_total: usize, mut f: impl FnMut(&[u32], &[u32])) {
    for total in 0..=max_total {
        for p in oracle::equality_patterns(total) {
            for split in 0..=total {
                f(&p[..split], &p[split..]);
            }
        }
    }
}

/// BLEU-1..4, ROUGE-1/2 (recall and F1), ROUGE-L, METEOR and LCS against
/// brute force on every pair of at most `max_total` tokens.
pub fn text_metrics_exhaustive(max_total: usize) -> (usize, Vec<String>) {
    let mut cases = 0usize;
    let mut bad = Vec::new();
    for_each_case(max_total, |c, r| {
        cases += 1;
        let (cw, rw) = (words(c), words(r));
        if !c.is_empty() && !r.is_empty() {
            for n in 1..=4 {
                let got = bleu_n(&cw, &[&rw], n).unwrap();
                if !close(got, oracle::bleu(c, r, n)) {
                    bad.push(format!("bleu{n} {c:?} {r:?}"));
                }
            }
            if !close(rouge_l(&cw, &rw).unwrap(), oracle::rouge_l(c, r)) {
                bad.push(format!("rougeL {c:?} {r:?}"));
            }
            if !close(meteor(&cw, &rw), oracle::meteor(c, r)) {
                bad.push(format!("meteor {c:?} {r:?}"));
            }
        }
        for n in 1..=2 {
            if r.len() >= n {
                if !close(rouge_n(&cw, &rw, n, RougeMode::Recall).unwrap(), oracle::rouge_n_recall(c, r, n)) {
                    bad.push(format!("rouge{n} {c:?} {r:?}"));
                }
                if !close(rouge_n(&cw, &rw, n, RougeMode::F1).unwrap(), oracle::rouge_n_f1(c, r, n)) {
                    bad.push(format!("rouge{n}f {c:?} {r:?}"));
                }
            } else if rouge_n(&cw, &rw, n, RougeMode::Recall) != Err(EvalError::EmptyReference) {
                bad.push(format!("rouge{n} on short reference {r:?}"));
            }
        }
        if lcs_len(&cw, &rw) != oracle::lcs(c, r) {
            bad.push(format!("lcs {c:?} {r:?}"));
        }
    });
    (cases, bad)
}

pub const POOL: [&str; 24] = [
    "CCO", "OCC", "c1ccccc1", "C1=CC=CC=C1", "CC(=O)O", "CCN", "CCCC", "CC(C)C", "c1ccncc1", "CC(=O)Oc1ccccc1C(=O)O", "O=C=O", "ClCCl", "CCOC(=O)C", "N#N",
    "c1ccc2ccccc2c1", "CC=O", "C1CC1", "xyz", "C1CC", "", "c1cccc", "CN(C)C", "OC(=O)CC(=O)O", "[Na+].[Cl-]",
];

/// Molecule-set metrics against set arithmetic on `trials` random sets of
/// at most 20 items.
pub fn set_metrics_random(trials: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canon = |s: &str| parse_molecule(s).map(|p| p.canonical);
    let fp_sim = |a: &str, b: &str| {
        let (x, y) = (parse_molecule(a).unwrap(), parse_molecule(b).unwrap());
        molmm_chem::tanimoto(&x.fingerprint, &y.fingerprint).unwrap()
    };
    let logp = |s: &str| molmm_chem::compute_properties(&molmm_chem::parse_smiles(s).unwrap()).ok().map(|p| p.logp);
    let opt_close = |a: Option<f64>, b: Option<f64>, tol: f64| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        (a, b) => a.is_none() && b.is_none(),
    };
    let (mut cases, mut bad) = (0, Vec::new());
    while cases < trials {
        let n = rng.random_range(1..=20);
        let pick = |rng: &mut ChaCha8Rng| POOL[rng.random_range(0..POOL.len())].to_string();
        let gen: Vec<Option<String>> = (0..n).map(|_| (rng.random_bool(0.9)).then(|| pick(&mut rng))).collect();
        let refs: Vec<String> = (0..n).map(|_| pick(&mut rng)).filter(|s| canon(s).is_some()).collect();
        if refs.len() != n {
            continue;
        }
        cases += 1;
        let train: Vec<String> = (0..rng.random_range(0..8)).map(|_| pick(&mut rng)).collect();
        let m = molecule_set_metrics(&MoleculeSet {
            generated: &gen,
            references: Some(&refs),
            sources: Some(&refs),
            train: &train,
        });
        let outs: Vec<Option<String>> = gen.iter().map(|g| g.as_deref().and_then(canon)).collect();
        let rc: Vec<String> = refs.iter().map(|r| canon(r).unwrap()).collect();
        let tc: Vec<String> = train.iter().filter_map(|t| canon(t)).collect();
        let o = oracle::set_metrics(&outs, &rc, &tc, fp_sim);
        // mean LogP gain over valid outputs, computed directly
        let gains: Vec<f64> = gen
            .iter()
            .zip(&refs)
            .filter_map(|(g, r)| {
                let g = g.as_deref().filter(|g| canon(g).is_some())?;
                Some(logp(g)? - logp(r)?)
            })
            .collect();
        let gain = (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64);
        let checks = [
            ("valid_rate", close(m.valid_rate, o.valid_rate)),
            ("accuracy", opt_close(m.accuracy, Some(o.accuracy), 1e-12)),
            ("novelty", opt_close(m.novelty, o.novelty, 1e-12)),
            ("diversity", opt_close(m.diversity, o.diversity, 1e-9)),
            ("increased_logp", opt_close(m.increased_logp, gain, 1e-9)),
        ];
        for (name, ok) in checks {
            if !ok {
                bad.push(format!("{name} on {gen:?} vs {refs:?}"));
            }
        }
    }
    (cases, bad)
}

pub fn random_text(rng: &mut ChaCha8Rng) -> String {
    let vocab = ["the", "a", "molecule", "acid", "ring", ",", ".", "is", "of", "benzene", "Ring", "42", "-"];
    (0..rng.random_range(0..25)).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
}

/// Range checks of the text and regression metrics on `trials` fuzzed inputs.
pub fn metric_ranges_fuzz(trials: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    for i in 0..trials {
        let (c, r) = (tokenize(&random_text(&mut rng)), tokenize(&random_text(&mut rng)));
        let mut ok = true;
        if !c.is_empty() && !r.is_empty() {
            ok &= (1..=4).all(|n| unit(bleu_n(&c, &[&r], n).unwrap()));
            ok &= unit(rouge_l(&c, &r).unwrap());
        }
        ok &= unit(meteor(&c, &r));
        ok &= rouge_n(&c, &r, 2, RougeMode::F1).map_or(true, unit);
        ok &= lcs_len(&c, &r) <= c.len().min(r.len());

        let k = rng.random_range(0..30);
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let yhat: Vec<f64> = y.iter().map(|v| if rng.random_bool(0.3) { 1.0 } else { v * rng.random_range(-2.0..2.0) }).collect();
        if let Some(m) = regression_metrics(&RegressionEval::new(y, yhat).unwrap()) {
            ok &= m.mse >= 0.0 && m.mae >= 0.0 && m.mae * m.mae <= m.mse + 1e-9;
            ok &= m.pearson.is_none_or(|p| (-1.0..=1.0).contains(&p));
        }
        if !ok {
            bad.push(format!("fuzz case {i}: {c:?} / {r:?}"));
        }
    }
    (trials, bad)
}

/// A report over `trials` fuzzed answers of every task; every metric must
/// lie in its documented range.
pub fn fuzzed_report(trials: usize, seed: u64) -> MetricReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::new();
    for i in 0..trials {
        let task = Task::ALL[i % 5];
        let smiles = POOL[rng.random_range(0..POOL.len())].to_string();
        let other = POOL[rng.random_range(0..POOL.len())].to_string();
        let props = |rng: &mut ChaCha8Rng| molmm_data::PropertyValues {
            mw: rng.random_range(10.0..600.0),
            logp: rng.random_range(-3.0..7.0),
            tpsa: rng.random_range(0.0..150.0),
            hbd: rng.random_range(0..6),
            hba: rng.random_range(0..10),
            rb: rng.random_range(0..12),
            qed: rng.random_range(0.0..1.0),
        };
        let (reference, output) = match task {
            Task::Img2Caption => (random_text(&mut rng) + " x", random_text(&mut rng)),
            Task::Img2Property => (
                molmm_data::property_answer(&props(&mut rng)),
                if rng.random_bool(0.8) { molmm_data::property_answer(&props(&mut rng)) } else { "no idea".into() },
            ),
            Task::Img2Smiles => (molmm_data::smiles_answer(&smiles), molmm_data::smiles_answer(&other)),
            Task::Property2Img => (format!("whose {}", molmm_data::property_clause(&props(&mut rng))), String::new()),
            Task::Img2Img => (String::new(), String::new()),
        };
        recs.push(EvalRecord {
            id: format!("r{i}"),
            task,
            reference,
            output,
            source_smiles: Some(smiles.clone()),
            reference_smiles: None,
            output_smiles: rng.random_bool(0.7).then_some(other),
        });
    }
    evaluate(&recs, &["CCO".to_string()], &EvalConfig { resamples: 50, seed: 1 })
}
