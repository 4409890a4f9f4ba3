//! The assembled tokenizer: forward pass, image↔token conversion and
//! checkpoints.

use std::path::Path;

use molmm_chem::MolImage;
use molmm_core::{checkpoint, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::VqConfig;
use crate::error::VqError;
use crate::model::{images_to_tensor, tensor_to_images, Discriminator, Generator, Perceptual};
use crate::quantize::quantize;

#[derive(Debug, Clone, PartialEq)]
pub struct VqModel {
    pub config: VqConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub perceptual: Perceptual,
}

/// Graph handles of one generator pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// encoder output as rows [N·h·w, n_z]
    pub zhat: Var,
    /// codebook rows selected by `indices`
    pub zq: Var,
    pub xhat: Var,
    pub indices: Vec<usize>,
}

/// One line of a token dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub image_id: String,
    pub indices: Vec<usize>,
}

impl VqModel {
    pub fn new(config: VqConfig) -> Result<VqModel, VqError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(&config, &mut rng);
        let discriminator = Discriminator::new(&config, &mut rng);
        let perceptual = Perceptual::new(&config, &mut rng);
        Ok(VqModel {
            config,
            generator,
            discriminator,
            perceptual,
        })
    }

    /// E, q and G on an [N, 3, H, W] input. With `trainable` the generator
    /// parameters (codebook included) are bound for gradients.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Forward, VqError> {
        let gen = &self.generator;
        let ze = gen.encoder.forward(g, &gen.store, x, trainable)?;
        let s = g.shape(ze).to_vec();
        let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
        let nhwc = g.permute(ze, &[0, 2, 3, 1])?;
        let zhat = g.reshape(nhwc, &[n * h * w, d])?;
        let (_, indices) = quantize(g.value(zhat), gen.codebook())?;
        let table = if trainable {
            g.param(&gen.store, gen.codebook)
        } else {
            g.frozen(&gen.store, gen.codebook)
        };
        let zq = g.embedding(table, &indices)?;
        let st = g.straight_through(zq, zhat)?;
        let grid = g.reshape(st, &[n, h, w, d])?;
        let nchw = g.permute(grid, &[0, 3, 1, 2])?;
        let xhat = gen.decoder.forward(g, &gen.store, nchw, trainable)?;
        Ok(Forward { zhat, zq, xhat, indices })
    }

    fn decode_indices(&self, indices: &[usize], n: usize) -> Result<Tensor, VqError> {
        let cb = self.generator.codebook();
        let (size, d) = (cb.shape()[0], cb.shape()[1]);
        let side = self.config.grid();
        if indices.len() != n * side * side {
            return Err(VqError::TokenCount {
                expected: n * side * side,
                got: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= size) {
            return Err(VqError::IndexOutOfRange { index: bad, size });
        }
        let mut g = Graph::new();
        let table = g.input(cb.clone());
        let rows = g.embedding(table, indices)?;
        let grid = g.reshape(rows, &[n, side, side, d])?;
        let z = g.permute(grid, &[0, 3, 1, 2])?;
        let gen = &self.generator;
        let xhat = gen.decoder.forward(&mut g, &gen.store, z, false)?;
        Ok(g.value(xhat).clone())
    }

    /// Token grids (row-major h·w indices) for a batch of images.
    pub fn encode_batch(&self, images: &[&MolImage]) -> Result<Vec<Vec<usize>>, VqError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = images_to_tensor(images, self.config.resolution)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let gen = &self.generator;
        let ze = gen.encoder.forward(&mut g, &gen.store, xv, false)?;
        let nhwc = g.permute(ze, &[0, 2, 3, 1])?;
        let (_, idx) = quantize(g.value(nhwc), gen.codebook())?;
        Ok(idx.chunks(self.config.tokens_per_image()).map(<[usize]>::to_vec).collect())
    }

    pub fn image_to_tokens(&self, img: &MolImage) -> Result<Vec<usize>, VqError> {
        Ok(self.encode_batch(&[img])?.pop().expect("one image"))
    }

    pub fn tokens_to_image(&self, indices: &[usize]) -> Result<MolImage, VqError> {
        let t = self.decode_indices(indices, 1)?;
        Ok(tensor_to_images(&t).pop().expect("one image"))
    }

    /// G(q(E(x))) for a batch, as raw [-1, 1] values.
    pub fn reconstruct_tensor(&self, images: &[&MolImage]) -> Result<Tensor, VqError> {
        let x = images_to_tensor(images, self.config.resolution)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let f = self.forward(&mut g, xv, false)?;
        Ok(g.value(f.xhat).clone())
    }

    pub fn reconstruct(&self, img: &MolImage) -> Result<MolImage, VqError> {
        Ok(tensor_to_images(&self.reconstruct_tensor(&[img])?).pop().expect("one image"))
    }

    /// All parameters in one store (names are already unique per network).
    pub fn all_params(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for store in [&self.generator.store, &self.discriminator.store, &self.perceptual.store] {
            for (name, t) in store.iter() {
                out.add(name, t.clone());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VqError> {
        checkpoint::save(&self.all_params(), path)?;
        Ok(())
    }

    pub fn load(config: VqConfig, path: impl AsRef<Path>) -> Result<VqModel, VqError> {
        let saved = checkpoint::load(path)?;
        let mut model = VqModel::new(config)?;
        checkpoint::restore(&mut model.generator.store, &saved)?;
        checkpoint::restore(&mut model.discriminator.store, &saved)?;
        checkpoint::restore(&mut model.perceptual.store, &saved)?;
        Ok(model)
    }
}

/// Writes one JSON object per line: {"image_id": .., "indices": [..]}.
pub fn write_token_dump<W: std::io::Write>(records: &[TokenRecord], mut w: W) -> Result<(), VqError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_token_dump<R: std::io::BufRead>(r: R) -> Result<Vec<TokenRecord>, VqError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
