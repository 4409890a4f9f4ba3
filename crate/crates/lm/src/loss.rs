//! Masked next-token cross-entropy plus the z-loss on the log-partition.

use molmm_core::{Graph, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct LmLoss {
    pub total: Var,
    pub ce: Var,
    pub z: Var,
}

/// `logits: [L, V]`; `mask[k]` marks supervised rows. ce is the mean masked
/// cross-entropy, z = λ·mean over masked k of (log Σ_j exp z_kj)², and
/// total = ce + z.
pub fn lm_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    lambda: f64,
) -> Result<LmLoss, TensorError> {
    let ce = g.cross_entropy(logits, targets, Some(mask))?;
    let count = mask.iter().filter(|&&m| m).count();
    let lse = g.log_sum_exp(logits, 1, false)?;
    let sq = g.square(lse);
    let w = Tensor::from_fn(&[mask.len()], |i| if mask[i] { T::of(1.0 / count as f64) } else { T::zero() });
    let wv = g.input(w);
    let weighted = g.mul(sq, wv)?;
    let mean = g.sum(weighted);
    let z = g.scale(mean, lambda);
    let total = g.add(ce, z)?;
    Ok(LmLoss { total, ce, z })
}
