//! Times training steps of the default-size model on random sequences.
//! Usage: lm_speed [seq_len] [batch] [steps]

use std::time::Instant;

use molmm_lm::{train_lm, Example, LmConfig, LmModel};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let (len, batch, steps) = (args.first().copied().unwrap_or(110), args.get(1).copied().unwrap_or(8), args.get(2).copied().unwrap_or(10));
    let cfg = LmConfig {
        batch_size: batch,
        steps,
        lr: 1e-3,
        ..LmConfig::default()
    };
    let examples: Vec<Example> = (0..16)
        .map(|s| Example::with_answer_from((0..len).map(|i| ((i * 31 + s * 7) % 700) as u32).collect(), len / 2))
        .collect();
    let mut model = LmModel::new(cfg).expect("model");
    let t = Instant::now();
    let r = train_lm(&mut model, &examples, 0).expect("train");
    println!("{:.3}s/step, last ce {:.3}", t.elapsed().as_secs_f64() / steps as f64, r.steps.last().unwrap().ce);
}
