//! Renders the first N corpus molecules and trains a tokenizer on them.
//! Usage: train_tokenizer <corpus.smi> [n] [steps]

use std::time::Instant;

use molmm_chem::{parse_smiles, render};
use molmm_vq::{codebook_usage, train_vq, VqConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).expect("usage: train_tokenizer <corpus.smi> [n] [steps]");
    let n: usize = args.get(2).map_or(2000, |s| s.parse().expect("n"));
    let steps: usize = args.get(3).map_or(1500, |s| s.parse().expect("steps"));
    let text = std::fs::read_to_string(path).expect("read corpus");
    let images: Vec<_> = text
        .lines()
        .filter_map(|l| parse_smiles(l.split_whitespace().next()?).ok())
        .filter_map(|m| render(&m, 64).ok())
        .take(n)
        .collect();
    let cfg = VqConfig {
        steps,
        ..VqConfig::default()
    };
    let t = Instant::now();
    let (model, report) = train_vq(&images, &cfg).expect("train");
    let (_, val) = molmm_vq::train::split_indices(images.len(), cfg.val_frac, cfg.seed);
    let val: Vec<_> = val.iter().map(|&i| &images[i]).collect();
    println!(
        "{} images, {:.1}s, baseline {:.4}, best {:?}, usage {:.3}, reseeded {}",
        images.len(),
        t.elapsed().as_secs_f64(),
        report.baseline_val_rec,
        report.best,
        codebook_usage(&model, &val).unwrap(),
        report.reseeded
    );
}
