//! Pre-norm transformer blocks with rotary attention and a GELU MLP.

use std::path::Path;

use molmm_core::{checkpoint, Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LmConfig;
use crate::LmError;

pub const NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Additive score for masked (future) positions; exp underflows to exactly 0.
const MASKED: f32 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub mlp_norm: usize,
    pub w1: usize,
    pub w2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmModel {
    pub config: LmConfig,
    pub store: ParamStore,
    pub embed: usize,
    pub blocks: Vec<Block>,
    pub final_norm: usize,
    pub out: usize,
}

impl LmModel {
    pub fn new(config: LmConfig) -> Result<LmModel, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, v) = (config.dim, config.vocab);
        let mut store = ParamStore::new();
        let resid_std = INIT_STD / (2.0 * config.layers as f64).sqrt();
        let embed = store.add("embed", Tensor::randn(&[v, d], INIT_STD, &mut rng));
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let mut lin = |name: &str, shape: [usize; 2], std: f64, rng: &mut ChaCha8Rng| {
                store.add(format!("layer{i}.{name}"), Tensor::randn(&shape, std, rng))
            };
            let wq = lin("wq", [d, d], INIT_STD, &mut rng);
            let wk = lin("wk", [d, d], INIT_STD, &mut rng);
            let wv = lin("wv", [d, d], INIT_STD, &mut rng);
            let wo = lin("wo", [d, d], resid_std, &mut rng);
            let w1 = lin("w1", [d, 4 * d], INIT_STD, &mut rng);
            let w2 = lin("w2", [4 * d, d], resid_std, &mut rng);
            let attn_norm = store.add(format!("layer{i}.attn_norm"), Tensor::ones(&[d]));
            let mlp_norm = store.add(format!("layer{i}.mlp_norm"), Tensor::ones(&[d]));
            blocks.push(Block {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                mlp_norm,
                w1,
                w2,
            });
        }
        let final_norm = store.add("final_norm", Tensor::ones(&[d]));
        // image-token output columns start at zero so every image id begins
        // with the same logit
        let mut w_out = Tensor::randn(&[d, v], INIT_STD, &mut rng);
        for row in w_out.data_mut().chunks_mut(v) {
            row[config.image_start..].fill(0.0);
        }
        let out = store.add("out", w_out);
        Ok(LmModel {
            config,
            store,
            embed,
            blocks,
            final_norm,
            out,
        })
    }

    /// Logits [B·L, V] for a batch of equal-length id rows. With `dropout`
    /// given, residual branches are dropped using that generator.
    pub fn forward(&self, g: &mut Graph, ids: &[Vec<u32>], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Var, LmError> {
        let c = &self.config;
        let (b, l) = (ids.len(), ids.first().map_or(0, Vec::len));
        if l > c.context {
            return Err(LmError::ContextOverflow { len: l, context: c.context });
        }
        let flat: Vec<usize> = ids.iter().flatten().map(|&i| i as usize).collect();
        if let Some(&bad) = flat.iter().find(|&&i| i >= c.vocab) {
            return Err(LmError::TokenOutOfRange {
                id: bad as u32,
                vocab: c.vocab,
            });
        }
        let (d, h, dh) = (c.dim, c.heads, c.head_dim());
        let table = g.param(&self.store, self.embed);
        let e = g.embedding(table, &flat)?;
        let mut x = g.reshape(e, &[b, l, d])?;
        let mask = g.input(Tensor::from_fn(&[l, l], |i| if i % l > i / l { MASKED } else { 0.0 }));

        for blk in &self.blocks {
            let hn = self.norm(g, x, blk.attn_norm)?;
            let heads = |g: &mut Graph, w: usize| -> Result<Var, TensorError> {
                let wv = g.param(&self.store, w);
                let p = g.matmul(hn, wv)?;
                let p = g.reshape(p, &[b, l, h, dh])?;
                g.permute(p, &[0, 2, 1, 3])
            };
            let q = heads(g, blk.wq)?;
            let k = heads(g, blk.wk)?;
            let v = heads(g, blk.wv)?;
            let q = g.rope(q, c.rope_base)?;
            let k = g.rope(k, c.rope_base)?;
            let kt = g.transpose(k, 2, 3)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let s = g.add(s, mask)?;
            let a = g.softmax(s, 3)?;
            let o = g.matmul(a, v)?;
            let o = g.permute(o, &[0, 2, 1, 3])?;
            let o = g.reshape(o, &[b, l, d])?;
            let wo = g.param(&self.store, blk.wo);
            let o = g.matmul(o, wo)?;
            let o = self.drop(g, o, dropout.as_deref_mut())?;
            x = g.add(x, o)?;

            let hn = self.norm(g, x, blk.mlp_norm)?;
            let w1 = g.param(&self.store, blk.w1);
            let w2 = g.param(&self.store, blk.w2);
            let m = g.matmul(hn, w1)?;
            let m = g.gelu(m);
            let m = g.matmul(m, w2)?;
            let m = self.drop(g, m, dropout.as_deref_mut())?;
            x = g.add(x, m)?;
        }
        let xn = self.norm(g, x, self.final_norm)?;
        let w = g.param(&self.store, self.out);
        let logits = g.matmul(xn, w)?;
        Ok(g.reshape(logits, &[b * l, c.vocab])?)
    }

    fn norm(&self, g: &mut Graph, x: Var, gain: usize) -> Result<Var, TensorError> {
        let n = g.rms_norm(x, NORM_EPS)?;
        let w = g.param(&self.store, gain);
        g.mul(n, w)
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-p).
    fn drop(&self, g: &mut Graph, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var, TensorError> {
        let p = self.config.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = (1.0 / (1.0 - p)) as f32;
        let m = Tensor::from_fn(g.shape(x), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let mv = g.input(m);
        g.mul(x, mv)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        checkpoint::save(&self.store, path)?;
        Ok(())
    }

    pub fn load(config: LmConfig, path: impl AsRef<Path>) -> Result<LmModel, LmError> {
        let saved = checkpoint::load(path)?;
        let mut model = LmModel::new(config)?;
        checkpoint::restore(&mut model.store, &saved)?;
        Ok(model)
    }
}
