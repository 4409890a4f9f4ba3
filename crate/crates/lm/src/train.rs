//! AdamW training over pre-tokenized sequences.

use molmm_core::optim::clip_grad_norm;
use molmm_core::{AdamConfig, AdamW, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::LossSpan;
use crate::loss::lm_loss;
use crate::model::LmModel;
use crate::LmError;

/// One training sequence. `answer[t]` marks token t as part of the answer,
/// i.e. a supervised target under [`LossSpan::Answer`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<u32>,
    pub answer: Vec<bool>,
}

impl Example {
    /// Answer starts at `answer_start` and runs to the end.
    pub fn with_answer_from(ids: Vec<u32>, answer_start: usize) -> Example {
        let answer = (0..ids.len()).map(|i| i >= answer_start).collect();
        Example { ids, answer }
    }

    pub fn answer_start(&self) -> usize {
        self.answer.iter().position(|&a| a).unwrap_or(self.ids.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub ce: f64,
    pub z: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub steps: Vec<StepLoss>,
}

/// Inputs, targets and mask for a padded batch.
pub struct Batch {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

pub fn make_batch(examples: &[&Example], pad: u32, span: LossSpan) -> Batch {
    let l = examples.iter().map(|e| e.ids.len().saturating_sub(1)).max().unwrap_or(0);
    let mut inputs = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len() * l);
    let mut mask = Vec::with_capacity(examples.len() * l);
    for e in examples {
        let n = e.ids.len().saturating_sub(1);
        let mut row = e.ids[..n].to_vec();
        row.resize(l, pad);
        inputs.push(row);
        for t in 0..l {
            if t < n {
                targets.push(e.ids[t + 1] as usize);
                mask.push(match span {
                    LossSpan::Answer => e.answer[t + 1],
                    LossSpan::All => true,
                });
            } else {
                targets.push(pad as usize);
                mask.push(false);
            }
        }
    }
    Batch { inputs, targets, mask }
}

/// Trains in place; `pad` fills short rows and is never supervised.
pub fn train_lm(model: &mut LmModel, examples: &[Example], pad: u32) -> Result<LmTrainReport, LmError> {
    train_lm_with(model, examples, pad, |_, _, _| true)
}

/// Like [`train_lm`], calling `on_step(step, loss, model)` after each update;
/// training stops early when it returns false.
pub fn train_lm_with(
    model: &mut LmModel,
    examples: &[Example],
    pad: u32,
    mut on_step: impl FnMut(usize, &StepLoss, &LmModel) -> bool,
) -> Result<LmTrainReport, LmError> {
    if examples.is_empty() {
        return Err(LmError::EmptyDataset);
    }
    let cfg = model.config.clone();
    if let Some(e) = examples.iter().find(|e| e.ids.len() > cfg.context + 1) {
        return Err(LmError::ContextOverflow {
            len: e.ids.len(),
            context: cfg.context,
        });
    }
    let mut opt = AdamW::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut pos = order.len();
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(examples.len()) {
            if pos == order.len() {
                order.shuffle(&mut order_rng);
                pos = 0;
            }
            picked.push(&examples[order[pos]]);
            pos += 1;
        }
        let batch = make_batch(&picked, pad, cfg.loss_span);
        if !batch.mask.iter().any(|&m| m) {
            continue;
        }
        let mut g = Graph::new();
        let logits = model.forward(&mut g, &batch.inputs, Some(&mut drop_rng))?;
        let loss = lm_loss(&mut g, logits, &batch.targets, &batch.mask, cfg.z_loss)?;
        let value = |v| g.value(v).item() as f64;
        let lr = cfg.lr_at(step);
        let rec = StepLoss {
            total: value(loss.total),
            ce: value(loss.ce),
            z: value(loss.z),
            lr,
        };
        if !rec.total.is_finite() {
            return Err(LmError::NonFiniteLoss { step });
        }
        let grads = g.backward(loss.total)?;
        let mut pg = g.param_grads(&grads, &model.store);
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut pg, cfg.grad_clip);
        }
        opt.step(&mut model.store, &pg, lr)?;
        if step % 100 == 0 {
            log::info!("lm step {step}: ce {:.4} z {:.2e}", rec.ce, rec.z);
        }
        steps.push(rec);
        if !on_step(step, &rec, model) {
            break;
        }
    }
    Ok(LmTrainReport { steps })
}

/// Mean cross-entropy over every supervised target of `examples`, without
/// dropout, in batches of `config.batch_size`.
pub fn evaluate_ce(model: &LmModel, examples: &[Example], pad: u32) -> Result<f64, LmError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(model.config.batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = make_batch(&refs, pad, model.config.loss_span);
        let n = batch.mask.iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        let mut g = Graph::new();
        let logits = model.forward(&mut g, &batch.inputs, None)?;
        let loss = lm_loss(&mut g, logits, &batch.targets, &batch.mask, 0.0)?;
        total += g.value(loss.ce).item() as f64 * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(LmError::EmptyDataset);
    }
    Ok(total / count as f64)
}
