//! The three-term objective: VQ-VAE terms, perceptual distance and the
//! adversarial pair, plus the adaptive weight that balances them.

use molmm_core::{Graph, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::model::{Discriminator, Perceptual};

/// Scalar values of every loss component for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VqLossReport {
    pub l_rec: f64,
    pub l_codebook: f64,
    pub l_commit: f64,
    pub l_perceptual: f64,
    pub l_gan_g: f64,
    pub l_gan_d: f64,
    pub lambda2: f64,
}

impl VqLossReport {
    pub fn all_finite(&self) -> bool {
        [
            self.l_rec,
            self.l_codebook,
            self.l_commit,
            self.l_perceptual,
            self.l_gan_g,
            self.l_gan_d,
            self.lambda2,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Graph handles of the VQ-VAE terms.
#[derive(Debug, Clone, Copy)]
pub struct VqTerms {
    pub rec: Var,
    pub codebook: Var,
    pub commit: Var,
}

/// `xhat` must be decoded from the straight-through codes so that `rec`
/// reaches the encoder. The codebook term moves only the codebook and the
/// commitment term only the encoder.
pub fn vqvae_loss(g: &mut Graph, x: Var, zhat: Var, zq: Var, xhat: Var) -> Result<VqTerms, TensorError> {
    let rec = g.mse(xhat, x)?;
    let zhat_sg = g.stop_gradient(zhat);
    let codebook = g.mse(zq, zhat_sg)?;
    let zq_sg = g.stop_gradient(zq);
    let commit = g.mse(zhat, zq_sg)?;
    Ok(VqTerms { rec, codebook, commit })
}

/// Mean squared distance between the perceptual feature maps of `x` and `xhat`.
pub fn perceptual_loss(g: &mut Graph, p: &Perceptual, x: Var, xhat: Var) -> Result<Var, TensorError> {
    let fx = p.features(g, x)?;
    let fy = p.features(g, xhat)?;
    g.mse(fy, fx)
}

/// Non-saturating generator loss mean −log σ(D(x̂)) and discriminator loss
/// mean −[log σ(D(x)) + log(1 − σ(D(x̂)))]. The generator term sees D frozen;
/// the discriminator term sees x̂ detached.
pub fn gan_losses(g: &mut Graph, d: &Discriminator, x: Var, xhat: Var) -> Result<(Var, Var), TensorError> {
    let fake_g = d.logits(g, xhat, false)?;
    let gen = softplus_mean(g, fake_g, true);

    let detached = g.stop_gradient(xhat);
    let real = d.logits(g, x, true)?;
    let fake = d.logits(g, detached, true)?;
    let real_term = softplus_mean(g, real, true);
    let fake_term = softplus_mean(g, fake, false);
    let disc = g.add(real_term, fake_term)?;
    Ok((gen, disc))
}

/// mean softplus(∓logits): −log σ(a) = softplus(−a), −log(1−σ(a)) = softplus(a).
fn softplus_mean(g: &mut Graph, logits: Var, negate: bool) -> Var {
    let a = if negate { g.neg(logits) } else { logits };
    let s = g.softplus(a);
    g.mean(s)
}

/// λ₂ = ‖∇rec‖ / (‖∇gan‖ + δ), clamped to [0, max]. Both gradients are
/// taken with respect to the decoder's final layer. A non-finite ratio
/// (overflowing or NaN gradients) yields 0 with a warning.
pub fn adaptive_lambda2(rec_grad: &Tensor, gan_grad: &Tensor, delta: f64, max: f64) -> f64 {
    let norm = |t: &Tensor| t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    let ratio = norm(rec_grad) / (norm(gan_grad) + delta);
    if !ratio.is_finite() {
        log::warn!("adaptive GAN weight is not finite; using 0");
        return 0.0;
    }
    ratio.clamp(0.0, max)
}
