//! Two-phase tokenizer training: VQ-VAE plus perceptual loss first, then
//! alternating generator and discriminator updates.

use molmm_chem::MolImage;
use molmm_core::{AdamConfig, AdamW, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::VqConfig;
use crate::error::VqError;
use crate::loss::{adaptive_lambda2, gan_losses, perceptual_loss, vqvae_loss, VqLossReport};
use crate::model::images_to_tensor;
use crate::vqmodel::VqModel;

const EVAL_BATCH: usize = 32;

/// Validation reconstruction and monitor (l_rec + λ₁·l_perceptual).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub step: usize,
    pub l_rec: f64,
    pub monitor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<VqLossReport>,
    pub percep_curve: Vec<f64>,
    pub validation: Vec<ValPoint>,
    /// Validation l_rec of the untrained generator.
    pub baseline_val_rec: f64,
    pub best: ValPoint,
    /// Code counts over every training token seen.
    pub usage: Vec<u64>,
    pub epoch_usage: Vec<Vec<u64>>,
    pub images_seen: usize,
    pub reseeded: usize,
    pub train_count: usize,
    pub val_count: usize,
}

/// Splits indices into (train, validation) with a seeded shuffle. A single
/// image is used for both.
pub fn split_indices(n: usize, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let nv = ((n as f64 * val_frac).ceil() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - nv);
    (idx, val)
}


/// Mean l_rec and monitor over `images`.
pub fn evaluate(model: &VqModel, images: &[&MolImage]) -> Result<(f64, f64), VqError> {
    let (mut rec, mut perc) = (0.0, 0.0);
    for chunk in images.chunks(EVAL_BATCH) {
        let x = images_to_tensor(chunk, model.config.resolution)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let f = model.forward(&mut g, xv, false)?;
        let r = g.mse(f.xhat, xv)?;
        let p = perceptual_loss(&mut g, &model.perceptual, xv, f.xhat)?;
        let w = chunk.len() as f64;
        rec += g.value(r).item() as f64 * w;
        perc += g.value(p).item() as f64 * w;
    }
    let n = images.len().max(1) as f64;
    Ok((rec / n, (rec + model.config.lambda1 * perc) / n))
}

/// Fraction of codebook entries used when tokenizing `images`.
pub fn codebook_usage(model: &VqModel, images: &[&MolImage]) -> Result<f64, VqError> {
    let mut used = vec![false; model.config.n_codes];
    for chunk in images.chunks(EVAL_BATCH) {
        for grid in model.encode_batch(chunk)? {
            for k in grid {
                used[k] = true;
            }
        }
    }
    Ok(used.iter().filter(|&&u| u).count() as f64 / used.len() as f64)
}

/// Cycles through a shuffled training order, one epoch at a time.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    /// Next batch and whether it ends an epoch.
    fn next(&mut self, size: usize) -> (Vec<usize>, bool) {
        if self.pos == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = if end == self.order.len() { 0 } else { end };
        (batch, self.pos == 0)
    }
}

fn pretrain_perceptual(
    model: &mut VqModel,
    images: &[&MolImage],
    batcher: &mut Batcher,
) -> Result<Vec<f64>, VqError> {
    let cfg = model.config.clone();
    let p = &mut model.perceptual;
    let mut opt = AdamW::new(&p.store, AdamConfig::default());
    let mut curve = Vec::with_capacity(cfg.percep_steps);
    for step in 0..cfg.percep_steps {
        let (batch, _) = batcher.next(cfg.batch_size);
        let refs: Vec<&MolImage> = batch.iter().map(|&i| images[i]).collect();
        let mut g = Graph::new();
        let x = g.input(images_to_tensor(&refs, cfg.resolution)?);
        let f = p.encoder.forward(&mut g, &p.store, x, true)?;
        let f = g.leaky_relu(f, 0.2);
        let y = p.decoder.forward(&mut g, &p.store, f, true)?;
        let l = g.mse(y, x)?;
        let v = g.value(l).item() as f64;
        if !v.is_finite() {
            return Err(VqError::NonFiniteLoss { step });
        }
        curve.push(v);
        let grads = g.backward(l)?;
        let pg = g.param_grads(&grads, &p.store);
        opt.step(&mut p.store, &pg, cfg.lr)?;
    }
    Ok(curve)
}

/// Replaces codes unused during the epoch with random recent encoder outputs
/// and clears their optimizer moments.
fn reseed_dead_codes<R: Rng>(model: &mut VqModel, opt: &mut AdamW, counts: &[u64], recent: &Tensor, rng: &mut R) -> usize {
    let d = model.config.code_dim;
    let rows = recent.len() / d;
    let ci = model.generator.codebook;
    let mut n = 0;
    for (k, _) in counts.iter().enumerate().filter(|(_, &c)| c == 0) {
        let r = rng.random_range(0..rows);
        let src = &recent.data()[r * d..(r + 1) * d];
        model.generator.store.value_mut(ci).data_mut()[k * d..(k + 1) * d].copy_from_slice(src);
        let st = opt.state_mut(ci);
        st.m[k * d..(k + 1) * d].fill(0.0);
        st.v[k * d..(k + 1) * d].fill(0.0);
        n += 1;
    }
    n
}

/// Trains a tokenizer on rendered images and returns the model with the
/// best validation monitor, plus the loss curves.
pub fn train_vq(images: &[MolImage], config: &VqConfig) -> Result<(VqModel, TrainReport), VqError> {
    if images.is_empty() {
        return Err(VqError::EmptyDataset);
    }
    let mut model = VqModel::new(config.clone())?;
    let cfg = config.clone();
    let (train_idx, val_idx) = split_indices(images.len(), cfg.val_frac, cfg.seed);
    let train: Vec<&MolImage> = train_idx.iter().map(|&i| &images[i]).collect();
    let val: Vec<&MolImage> = val_idx.iter().map(|&i| &images[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut batcher = Batcher {
        order: (0..train.len()).collect(),
        pos: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
    };

    let percep_curve = pretrain_perceptual(&mut model, &train, &mut batcher)?;
    batcher.pos = 0;

    let (base_rec, base_mon) = evaluate(&model, &val)?;
    let mut best = ValPoint {
        step: 0,
        l_rec: base_rec,
        monitor: base_mon,
    };
    let mut best_store = model.generator.store.clone();
    let mut validation = vec![best];

    let mut gen_opt = AdamW::new(&model.generator.store, AdamConfig::default());
    let mut disc_opt = AdamW::new(
        &model.discriminator.store,
        AdamConfig {
            beta1: 0.5,
            ..AdamConfig::default()
        },
    );
    let n_codes = cfg.n_codes;
    let mut usage = vec![0u64; n_codes];
    let mut epoch_counts = vec![0u64; n_codes];
    let mut epoch_usage = Vec::new();
    let (mut images_seen, mut reseeded) = (0, 0);
    let mut steps = Vec::with_capacity(cfg.steps);
    let gan_start = cfg.gan_start_step();
    let last = model.generator.last_decoder_weight();

    for step in 0..cfg.steps {
        let (batch, epoch_end) = batcher.next(cfg.batch_size);
        let refs: Vec<&MolImage> = batch.iter().map(|&i| train[i]).collect();
        let mut g = Graph::new();
        let x = g.input(images_to_tensor(&refs, cfg.resolution)?);
        let f = model.forward(&mut g, x, true)?;
        let terms = vqvae_loss(&mut g, x, f.zhat, f.zq, f.xhat)?;
        let perc = perceptual_loss(&mut g, &model.perceptual, x, f.xhat)?;
        let perc_w = g.scale(perc, cfg.lambda1);
        let commit_w = g.scale(terms.commit, cfg.commit_weight);
        let a = g.add(terms.rec, perc_w)?;
        let b = g.add(terms.codebook, commit_w)?;
        let total = g.add(a, b)?;
        let vq_grads = g.backward(total)?;
        let mut grads = g.param_grads(&vq_grads, &model.generator.store);

        let scalar = |v| g.value(v).item() as f64;
        let mut report = VqLossReport {
            l_rec: scalar(terms.rec),
            l_codebook: scalar(terms.codebook),
            l_commit: scalar(terms.commit),
            l_perceptual: scalar(perc),
            ..VqLossReport::default()
        };

        if step >= gan_start {
            let (gan_g, gan_d) = gan_losses(&mut g, &model.discriminator, x, f.xhat)?;
            let gg = g.backward(gan_g)?;
            let gan_grads = g.param_grads(&gg, &model.generator.store);
            let zeros = Tensor::zeros(model.generator.store.value(last).shape());
            let lambda2 = adaptive_lambda2(
                grads[last].as_ref().unwrap_or(&zeros),
                gan_grads[last].as_ref().unwrap_or(&zeros),
                cfg.delta,
                cfg.lambda2_max,
            );
            for (acc, extra) in grads.iter_mut().zip(gan_grads) {
                match (acc.as_mut(), extra) {
                    (Some(a), Some(e)) => {
                        for (x, y) in a.data_mut().iter_mut().zip(e.data()) {
                            *x += lambda2 as f32 * y;
                        }
                    }
                    (None, Some(e)) => *acc = Some(e.map(|y| lambda2 as f32 * y)),
                    _ => {}
                }
            }
            let dg = g.backward(gan_d)?;
            let disc_grads = g.param_grads(&dg, &model.discriminator.store);
            report.l_gan_g = g.value(gan_g).item() as f64;
            report.l_gan_d = g.value(gan_d).item() as f64;
            report.lambda2 = lambda2;
            if !report.all_finite() {
                return Err(VqError::NonFiniteLoss { step });
            }
            disc_opt.step(&mut model.discriminator.store, &disc_grads, cfg.disc_lr)?;
        } else if !report.all_finite() {
            return Err(VqError::NonFiniteLoss { step });
        }
        gen_opt.step(&mut model.generator.store, &grads, cfg.lr)?;

        for &k in &f.indices {
            usage[k] += 1;
            epoch_counts[k] += 1;
        }
        images_seen += batch.len();
        steps.push(report);

        if epoch_end {
            let recent = g.value(f.zhat).clone();
            reseeded += reseed_dead_codes(&mut model, &mut gen_opt, &epoch_counts, &recent, &mut rng);
            epoch_usage.push(std::mem::replace(&mut epoch_counts, vec![0; n_codes]));
        }

        let done = step + 1;
        if done % cfg.eval_every.max(1) == 0 || done == cfg.steps {
            let (l_rec, monitor) = evaluate(&model, &val)?;
            let point = ValPoint {
                step: done,
                l_rec,
                monitor,
            };
            log::info!("vq step {done}: train rec {:.4} val rec {l_rec:.4} monitor {monitor:.4}", report.l_rec);
            validation.push(point);
            if monitor < best.monitor {
                best = point;
                best_store = model.generator.store.clone();
            }
        }
    }
    if epoch_counts.iter().any(|&c| c > 0) {
        epoch_usage.push(epoch_counts);
    }
    model.generator.store = best_store;

    Ok((
        model,
        TrainReport {
            steps,
            percep_curve,
            validation,
            baseline_val_rec: base_rec,
            best,
            usage,
            epoch_usage,
            images_seen,
            reseeded,
            train_count: train.len(),
            val_count: val.len(),
        },
    ))
}
