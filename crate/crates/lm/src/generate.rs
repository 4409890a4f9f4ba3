//! Incremental decoding with a key/value cache and the image-span
//! constraint: `<boi>` must be followed by exactly h·w image ids and then
//! `<eoi>`; image ids are inadmissible anywhere else.

use molmm_text::{BpeVocab, Modality, Special, TokenSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{LmModel, NORM_EPS};
use crate::LmError;

#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Greedy,
    /// Temperature sampling over the `top_k` best admissible ids (0 = all).
    Sample { temperature: f64, top_k: usize, seed: u64 },
}

/// Token ids the decoder must treat structurally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraint {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
    pub boi: u32,
    pub eoi: u32,
    pub image_start: u32,
    pub image_end: u32,
    pub tokens_per_image: usize,
}

impl Constraint {
    pub fn from_vocab(v: &BpeVocab, tokens_per_image: usize) -> Constraint {
        Constraint {
            bos: v.special(Special::Bos),
            eos: v.special(Special::Eos),
            pad: v.special(Special::Pad),
            boi: v.special(Special::Boi),
            eoi: v.special(Special::Eoi),
            image_start: v.image_id(0),
            image_end: v.image_id(v.image_tokens()),
            tokens_per_image,
        }
    }

    fn is_image(&self, id: u32) -> bool {
        (self.image_start..self.image_end).contains(&id)
    }

    /// Image ids emitted since the last unclosed `<boi>`, if one is open.
    fn open_image(&self, ids: &[u32]) -> Option<usize> {
        let boi = ids.iter().rposition(|&i| i == self.boi)?;
        if ids[boi..].contains(&self.eoi) {
            return None;
        }
        Some(ids[boi + 1..].iter().filter(|&&i| self.is_image(i)).count())
    }
}

/// Per-layer cached keys and values, [position][dim].
struct Cache {
    keys: Vec<Vec<Vec<f32>>>,
    values: Vec<Vec<Vec<f32>>>,
}

fn matvec(x: &[f32], w: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; cols];
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

fn rms(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let r = 1.0 / (ms + NORM_EPS as f32).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * r * g).collect()
}

fn gelu(v: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

fn rope(x: &mut [f32], pos: usize, base: f64) {
    let d = x.len();
    for i in 0..d / 2 {
        let f = base.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = (pos as f64 * f).sin_cos();
        let (s, c) = (s as f32, c as f32);
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = a * c - b * s;
        x[2 * i + 1] = a * s + b * c;
    }
}

impl LmModel {
    fn start_cache(&self) -> Cache {
        Cache {
            keys: vec![Vec::new(); self.blocks.len()],
            values: vec![Vec::new(); self.blocks.len()],
        }
    }

    /// Logits after appending `token` at position `cache length`.
    fn step(&self, cache: &mut Cache, token: u32) -> Vec<f32> {
        let c = &self.config;
        let (d, h, dh) = (c.dim, c.heads, c.head_dim());
        let p = |i: usize| self.store.value(i).data();
        let pos = cache.keys[0].len();
        let mut x = p(self.embed)[token as usize * d..(token as usize + 1) * d].to_vec();
        for (li, blk) in self.blocks.iter().enumerate() {
            let hn = rms(&x, p(blk.attn_norm));
            let mut q = matvec(&hn, p(blk.wq), d);
            let mut k = matvec(&hn, p(blk.wk), d);
            let v = matvec(&hn, p(blk.wv), d);
            for head in 0..h {
                rope(&mut q[head * dh..(head + 1) * dh], pos, c.rope_base);
                rope(&mut k[head * dh..(head + 1) * dh], pos, c.rope_base);
            }
            cache.keys[li].push(k);
            cache.values[li].push(v);
            let mut att = vec![0.0f32; d];
            let scale = 1.0 / (dh as f32).sqrt();
            for head in 0..h {
                let r = head * dh..(head + 1) * dh;
                let scores: Vec<f32> = cache.keys[li]
                    .iter()
                    .map(|kk| kk[r.clone()].iter().zip(&q[r.clone()]).map(|(a, b)| a * b).sum::<f32>() * scale)
                    .collect();
                let m = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let e: Vec<f32> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f32 = e.iter().sum();
                for (w, vv) in e.iter().zip(&cache.values[li]) {
                    for (o, &val) in att[r.clone()].iter_mut().zip(&vv[r.clone()]) {
                        *o += w / z * val;
                    }
                }
            }
            let o = matvec(&att, p(blk.wo), d);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let hn = rms(&x, p(blk.mlp_norm));
            let m: Vec<f32> = matvec(&hn, p(blk.w1), 4 * d).into_iter().map(gelu).collect();
            let m = matvec(&m, p(blk.w2), d);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        }
        let xn = rms(&x, p(self.final_norm));
        matvec(&xn, p(self.out), c.vocab)
    }

    /// Logits at every position of `ids` through the cached path.
    pub fn incremental_logits(&self, ids: &[u32]) -> Vec<Vec<f32>> {
        let mut cache = self.start_cache();
        ids.iter().map(|&t| self.step(&mut cache, t)).collect()
    }
}

fn pick(logits: &[f32], allowed: impl Fn(u32) -> bool, sampler: &Sampler, rng: &mut ChaCha8Rng) -> u32 {
    let mut cands: Vec<(u32, f32)> = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i as u32))
        .map(|(i, &l)| (i as u32, l))
        .collect();
    // best first; equal logits keep the lower id first
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match sampler {
        Sampler::Greedy => cands[0].0,
        Sampler::Sample { temperature, top_k, .. } => {
            if *top_k > 0 {
                cands.truncate(*top_k);
            }
            let t = temperature.max(1e-6);
            let m = cands[0].1 as f64;
            let w: Vec<f64> = cands.iter().map(|c| ((c.1 as f64 - m) / t).exp()).collect();
            let mut r = rng.random::<f64>() * w.iter().sum::<f64>();
            for (c, wi) in cands.iter().zip(&w) {
                if r < *wi {
                    return c.0;
                }
                r -= wi;
            }
            cands.last().expect("non-empty candidates").0
        }
    }
}

/// Continues `prompt` until `<eos>`, the context limit or `max_new` tokens.
/// Returns prompt plus continuation.
pub fn generate(model: &LmModel, c: &Constraint, prompt: &[u32], sampler: &Sampler, max_new: usize) -> Result<Vec<u32>, LmError> {
    let context = model.config.context;
    if prompt.is_empty() || prompt.len() >= context {
        return Err(LmError::ContextOverflow {
            len: prompt.len(),
            context,
        });
    }
    if let Some(&bad) = prompt.iter().find(|&&i| i as usize >= model.config.vocab) {
        return Err(LmError::TokenOutOfRange {
            id: bad,
            vocab: model.config.vocab,
        });
    }
    let seed = match sampler {
        Sampler::Sample { seed, .. } => *seed,
        Sampler::Greedy => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = context.min(prompt.len() + max_new);
    let mut ids = prompt.to_vec();
    let mut open = c.open_image(prompt);
    if open.is_some_and(|k| ids.len() + (c.tokens_per_image - k) + 1 > context) {
        return Err(LmError::ContextOverflow { len: ids.len(), context });
    }
    let mut cache = model.start_cache();
    let mut logits = Vec::new();
    for &t in prompt {
        logits = model.step(&mut cache, t);
    }
    let vocab = model.config.vocab as u32;
    while ids.len() < limit || open.is_some() {
        let next = match open {
            Some(k) if k == c.tokens_per_image => c.eoi,
            Some(_) => pick(&logits, |i| c.is_image(i), sampler, &mut rng),
            None => {
                // a new image must fit before the limit
                let room = ids.len() + c.tokens_per_image + 2 <= limit;
                pick(
                    &logits,
                    |i| i < vocab && !c.is_image(i) && i != c.eoi && i != c.bos && i != c.pad && (room || i != c.boi),
                    sampler,
                    &mut rng,
                )
            }
        };
        ids.push(next);
        open = match (open, next) {
            (None, t) if t == c.boi => Some(0),
            (Some(_), t) if t == c.eoi => None,
            (Some(k), _) => Some(k + 1),
            (None, _) => None,
        };
        if next == c.eos || ids.len() >= context {
            break;
        }
        logits = model.step(&mut cache, next);
    }
    Ok(ids)
}

/// One line of a generation transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt_ids: Vec<u32>,
    pub output_ids: Vec<u32>,
    pub decoded_text: String,
    /// (start, len) of each image span within `output_ids`
    pub image_token_spans: Vec<(usize, usize)>,
}

impl Transcript {
    pub fn new(vocab: &BpeVocab, prompt: &[u32], full: &[u32]) -> Transcript {
        let output = full[prompt.len()..].to_vec();
        let text: Vec<u32> = output.iter().copied().filter(|&i| vocab.image_code(i).is_none()).collect();
        let decoded_text = String::from_utf8_lossy(&vocab.decode_bytes(&text).unwrap_or_default()).into_owned();
        let seq = TokenSequence::from_ids(vocab, output.clone());
        let image_token_spans = seq
            .spans
            .iter()
            .filter(|s| s.modality == Modality::Image)
            .map(|s| (s.start, s.len))
            .collect();
        Transcript {
            prompt_ids: prompt.to_vec(),
            output_ids: output,
            decoded_text,
            image_token_spans,
        }
    }
}
