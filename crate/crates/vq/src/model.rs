//! Encoder, decoder, patch discriminator and the perceptual feature net.

use molmm_chem::MolImage;
use molmm_core::{Graph, ParamStore, Tensor, TensorError, Var};
use rand::Rng;

use crate::config::VqConfig;
use crate::error::VqError;

const SLOPE: f64 = 0.2;

/// One convolution (or transposed convolution) with bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
}

impl Conv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        transpose: bool,
        rng: &mut R,
    ) -> Conv {
        // He init on the fan-in seen by each output
        let fan_in = if transpose { cin * k * k / (stride * stride) } else { cin * k * k };
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let shape = if transpose { [cin, cout, k, k] } else { [cout, cin, k, k] };
        let weight = store.add(format!("{name}.w"), Tensor::randn(&shape, std, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, cout, 1, 1]));
        Conv {
            weight,
            bias,
            stride,
            pad: (k - stride) / 2,
            transpose,
        }
    }

    /// Applies the layer; `trainable` decides whether its parameters join the tape.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Result<Var, TensorError> {
        let (w, b) = if trainable {
            (g.param(store, self.weight), g.param(store, self.bias))
        } else {
            (g.frozen(store, self.weight), g.frozen(store, self.bias))
        };
        let y = if self.transpose {
            g.conv_transpose2d(x, w, self.stride, self.pad)?
        } else {
            g.conv2d(x, w, self.stride, self.pad)?
        };
        g.add(y, b)
    }
}

/// A chain of layers with leaky ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<Conv>,
}

impl Stack {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var, trainable: bool) -> Result<Var, TensorError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(g, store, x, trainable)?;
            if i + 1 < self.layers.len() {
                x = g.leaky_relu(x, SLOPE);
            }
        }
        Ok(x)
    }

    pub fn last(&self) -> &Conv {
        self.layers.last().expect("empty stack")
    }
}

/// Generator side: encoder E, codebook Z and decoder G share one store.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub store: ParamStore,
    pub encoder: Stack,
    pub decoder: Stack,
    pub codebook: usize,
}

impl Generator {
    pub fn new<R: Rng>(cfg: &VqConfig, rng: &mut R) -> Generator {
        let mut store = ParamStore::new();
        let mut enc = Vec::new();
        let mut cin = 3;
        for (i, &c) in cfg.channels.iter().enumerate() {
            enc.push(Conv::new(&mut store, &format!("enc.{i}"), (cin, c, 4), 2, false, rng));
            cin = c;
        }
        enc.push(Conv::new(&mut store, "enc.out", (cin, cfg.code_dim, 1), 1, false, rng));
        let bound = 1.0 / cfg.n_codes as f64;
        let codebook = store.add("codebook", Tensor::uniform(&[cfg.n_codes, cfg.code_dim], bound, rng));
        let mut dec = vec![Conv::new(&mut store, "dec.in", (cfg.code_dim, cin, 1), 1, false, rng)];
        let n = cfg.channels.len();
        for i in (0..n).rev() {
            let cout = if i == 0 { 3 } else { cfg.channels[i - 1] };
            dec.push(Conv::new(&mut store, &format!("dec.{}", n - 1 - i), (cin, cout, 4), 2, true, rng));
            cin = cout;
        }
        Generator {
            store,
            encoder: Stack { layers: enc },
            decoder: Stack { layers: dec },
            codebook,
        }
    }

    pub fn codebook(&self) -> &Tensor {
        self.store.value(self.codebook)
    }

    /// The weight tensor of the decoder's final layer (the one λ₂ is balanced on).
    pub fn last_decoder_weight(&self) -> usize {
        self.decoder.last().weight
    }
}

/// Patch discriminator: stride-2 convs then a 3×3 logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub store: ParamStore,
    pub net: Stack,
}

impl Discriminator {
    pub fn new<R: Rng>(cfg: &VqConfig, rng: &mut R) -> Discriminator {
        let mut store = ParamStore::new();
        let c = cfg.disc_channels;
        let layers = vec![
            Conv::new(&mut store, "disc.0", (3, c, 4), 2, false, rng),
            Conv::new(&mut store, "disc.1", (c, 2 * c, 4), 2, false, rng),
            Conv::new(&mut store, "disc.out", (2 * c, 1, 3), 1, false, rng),
        ];
        Discriminator {
            store,
            net: Stack { layers },
        }
    }

    /// Patch logits [N, 1, H/4, W/4].
    pub fn logits(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var, TensorError> {
        self.net.forward(g, &self.store, x, trainable)
    }
}

/// Plain autoencoder whose frozen encoder serves as the perceptual feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceptual {
    pub store: ParamStore,
    pub encoder: Stack,
    pub decoder: Stack,
}

impl Perceptual {
    pub fn new<R: Rng>(cfg: &VqConfig, rng: &mut R) -> Perceptual {
        let mut store = ParamStore::new();
        let c = cfg.percep_channels;
        let encoder = Stack {
            layers: vec![
                Conv::new(&mut store, "percep.enc.0", (3, c, 4), 2, false, rng),
                Conv::new(&mut store, "percep.enc.1", (c, 2 * c, 4), 2, false, rng),
            ],
        };
        let decoder = Stack {
            layers: vec![
                Conv::new(&mut store, "percep.dec.0", (2 * c, c, 4), 2, true, rng),
                Conv::new(&mut store, "percep.dec.1", (c, 3, 4), 2, true, rng),
            ],
        };
        Perceptual { store, encoder, decoder }
    }

    /// Feature map P(x), with the extractor frozen.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let f = self.encoder.forward(g, &self.store, x, false)?;
        Ok(g.leaky_relu(f, SLOPE))
    }
}

/// Pixel value in [-1, 1].
pub fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn from_unit(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Stacks images into an [N, 3, H, W] tensor scaled to [-1, 1].
pub fn images_to_tensor(images: &[&MolImage], resolution: usize) -> Result<Tensor, VqError> {
    let plane = resolution * resolution;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.width != resolution || img.height != resolution {
            return Err(VqError::ImageSize {
                width: img.width,
                height: img.height,
                resolution,
            });
        }
        for (p, px) in img.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + p] = to_unit(px[c]);
            }
        }
    }
    Ok(Tensor::new(vec![images.len(), 3, resolution, resolution], data)?)
}

/// Splits an [N, 3, H, W] tensor back into images.
pub fn tensor_to_images(t: &Tensor) -> Vec<MolImage> {
    let (n, h, w) = (t.shape()[0], t.shape()[2], t.shape()[3]);
    let plane = h * w;
    (0..n)
        .map(|i| {
            let mut img = MolImage::blank(w, h);
            for p in 0..plane {
                for c in 0..3 {
                    img.pixels[p * 3 + c] = from_unit(t.data()[(i * 3 + c) * plane + p]);
                }
            }
            img
        })
        .collect()
}
