//! Seeded bootstrap standard errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Standard deviation of `stat` over `resamples` index resamples of 0..n
/// drawn with replacement. Resamples where `stat` is None are ignored;
/// None when fewer than two resamples produce a value.
pub fn bootstrap_se(n: usize, resamples: usize, seed: u64, mut stat: impl FnMut(&[usize]) -> Option<f64>) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut vals = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        if let Some(x) = stat(&idx).filter(|x| x.is_finite()) {
            vals.push(x);
        }
    }
    if vals.len() < 2 {
        return None;
    }
    // shifted by the first value so a constant statistic gives exactly 0
    let d: Vec<f64> = vals.iter().map(|x| x - vals[0]).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    Some((d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt())
}
