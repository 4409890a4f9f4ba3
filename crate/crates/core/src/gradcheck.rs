//! Central finite-difference checks of the graph's analytic gradients.

use rand::{Rng, SeedableRng};

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Allowed `|analytic - numeric| / max(|analytic|, |numeric|)`.
    pub rel_tol: f64,
    /// Differences below this pass regardless, so zero gradients do not
    /// fail on rounding noise.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            rel_tol: 1e-3,
            abs_floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub entries: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.entries += other.entries;
        self.failures += other.failures;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

/// Checks every input gradient of `f` against central differences of the
/// scalar `Σ r ⊙ f(inputs)`, with `r` a fixed random projection.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, cfg: GradCheckConfig, seed: u64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = f(&mut g, &vars)?;
    let proj = Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0));
    let loss = project(&mut g, y, &proj)?;
    let grads = g.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let y = f(&mut g, &vars)?;
        let l = project(&mut g, y, &proj)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&g, *v);
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + cfg.eps;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x0 - cfg.eps;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic.data()[j];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            report.entries += 1;
            if diff > cfg.abs_floor {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > cfg.rel_tol {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}

fn project(g: &mut Graph<f64>, y: Var, proj: &Tensor<f64>) -> Result<Var, TensorError> {
    let r = g.input(proj.clone());
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>>;

/// One differentiable op with a generator of random trial inputs.
pub struct OpCase {
    pub name: &'static str,
    pub trial: fn(&mut rand::rngs::StdRng) -> (Vec<Tensor<f64>>, Build),
}

fn rand_t(rng: &mut rand::rngs::StdRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Magnitudes in [0.1, 1] with random sign, keeping kinks and poles out of
/// reach of the finite-difference step.
fn away_from_zero(rng: &mut rand::rngs::StdRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut rand::rngs::StdRng, ranks: std::ops::RangeInclusive<usize>, max: usize) -> Vec<usize> {
    let rank = rng.random_range(ranks);
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

/// A random shape and a second shape that broadcasts against it.
fn broadcast_pair(rng: &mut rand::rngs::StdRng) -> (Vec<usize>, Vec<usize>) {
    let a = dims(rng, 1..=3, 3);
    let cut = rng.random_range(0..a.len());
    let mut b: Vec<usize> = a[cut..].to_vec();
    for d in b.iter_mut() {
        if rng.random_bool(0.3) {
            *d = 1;
        }
    }
    if rng.random_bool(0.5) {
        (a, b)
    } else {
        (b, a)
    }
}

macro_rules! unary_case {
    ($name:literal, $gen:ident, $body:expr) => {
        OpCase {
            name: $name,
            trial: |rng| {
                let s = dims(rng, 1..=3, 4);
                let f: Build = Box::new($body);
                (vec![$gen(rng, &s)], f)
            },
        }
    };
}

macro_rules! binary_case {
    ($name:literal, $op:ident) => {
        OpCase {
            name: $name,
            trial: |rng| {
                let (a, b) = broadcast_pair(rng);
                let f: Build = Box::new(|g, v| g.$op(v[0], v[1]));
                (vec![rand_t(rng, &a), rand_t(rng, &b)], f)
            },
        }
    };
}

fn random_axis(rng: &mut rand::rngs::StdRng) -> (Vec<usize>, usize, bool) {
    let s = dims(rng, 1..=3, 4);
    let axis = rng.random_range(0..s.len());
    (s, axis, rng.random_bool(0.5))
}

/// Every differentiable op of [`Graph`]. `stop_gradient` and
/// `straight_through` are excluded: their gradients are defined to differ
/// from the derivative of their forward value and are checked by routing
/// tests instead.
pub fn registered_ops() -> Vec<OpCase> {
    vec![
        binary_case!("add", add),
        binary_case!("sub", sub),
        binary_case!("mul", mul),
        OpCase {
            name: "div",
            trial: |rng| {
                let (a, b) = broadcast_pair(rng);
                let f: Build = Box::new(|g, v| g.div(v[0], v[1]));
                (vec![rand_t(rng, &a), away_from_zero(rng, &b)], f)
            },
        },
        unary_case!("scale", rand_t, |g, v| Ok(g.scale(v[0], -1.7))),
        unary_case!("add_scalar", rand_t, |g, v| Ok(g.add_scalar(v[0], 0.3))),
        unary_case!("relu", away_from_zero, |g, v| Ok(g.relu(v[0]))),
        unary_case!("leaky_relu", away_from_zero, |g, v| Ok(g.leaky_relu(v[0], 0.2))),
        unary_case!("gelu", rand_t, |g, v| Ok(g.gelu(v[0]))),
        unary_case!("tanh", rand_t, |g, v| Ok(g.tanh(v[0]))),
        unary_case!("sigmoid", rand_t, |g, v| Ok(g.sigmoid(v[0]))),
        unary_case!("softplus", rand_t, |g, v| Ok(g.softplus(v[0]))),
        unary_case!("exp", rand_t, |g, v| Ok(g.exp(v[0]))),
        OpCase {
            name: "log",
            trial: |rng| {
                let s = dims(rng, 2..=2, 4);
                let t = Tensor::from_fn(&s, |_| rng.random_range(0.2..2.0));
                let f: Build = Box::new(|g, v| Ok(g.log(v[0])));
                (vec![t], f)
            },
        },
        unary_case!("square", rand_t, |g, v| Ok(g.square(v[0]))),
        OpCase {
            name: "matmul",
            trial: |rng| {
                let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
                let batch = rng.random_range(1..=3);
                let (a, b) = match rng.random_range(0..3) {
                    0 => (vec![m, k], vec![k, n]),
                    1 => (vec![batch, m, k], vec![batch, k, n]),
                    _ => (vec![batch, m, k], vec![k, n]),
                };
                let f: Build = Box::new(|g, v| g.matmul(v[0], v[1]));
                (vec![rand_t(rng, &a), rand_t(rng, &b)], f)
            },
        },
        OpCase {
            name: "reshape",
            trial: |rng| {
                let s = dims(rng, 3..=3, 3);
                let f: Build = Box::new(move |g, v| {
                    let n = g.value(v[0]).len();
                    g.reshape(v[0], &[n])
                });
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "permute",
            trial: |rng| {
                let s = dims(rng, 3..=3, 3);
                let perms = [[0, 2, 1], [1, 0, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
                let p = perms[rng.random_range(0..perms.len())];
                let f: Build = Box::new(move |g, v| g.permute(v[0], &p));
                (vec![rand_t(rng, &s)], f)
            },
        },
        unary_case!("sum", rand_t, |g, v| Ok(g.sum(v[0]))),
        unary_case!("mean", rand_t, |g, v| Ok(g.mean(v[0]))),
        OpCase {
            name: "sum_axis",
            trial: |rng| {
                let (s, axis, keep) = random_axis(rng);
                let f: Build = Box::new(move |g, v| g.sum_axis(v[0], axis, keep));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "mean_axis",
            trial: |rng| {
                let (s, axis, keep) = random_axis(rng);
                let f: Build = Box::new(move |g, v| g.mean_axis(v[0], axis, keep));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "softmax",
            trial: |rng| {
                let (s, axis, _) = random_axis(rng);
                let f: Build = Box::new(move |g, v| g.softmax(v[0], axis));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "log_softmax",
            trial: |rng| {
                let (s, axis, _) = random_axis(rng);
                let f: Build = Box::new(move |g, v| g.log_softmax(v[0], axis));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "log_sum_exp",
            trial: |rng| {
                let (s, axis, keep) = random_axis(rng);
                let f: Build = Box::new(move |g, v| g.log_sum_exp(v[0], axis, keep));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "conv2d",
            trial: |rng| {
                let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
                let k = rng.random_range(1..=3);
                let (stride, pad) = (rng.random_range(1..=2), rng.random_range(0..=1));
                let (h, w) = (rng.random_range(k..=5), rng.random_range(k..=5));
                let f: Build = Box::new(move |g, v| g.conv2d(v[0], v[1], stride, pad));
                (vec![rand_t(rng, &[n, c, h, w]), rand_t(rng, &[o, c, k, k])], f)
            },
        },
        OpCase {
            name: "conv_transpose2d",
            trial: |rng| {
                let (n, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
                let k = rng.random_range(2..=4);
                let stride = rng.random_range(1..=2);
                let pad = rng.random_range(0..=(k - 1) / 2);
                let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
                let f: Build = Box::new(move |g, v| g.conv_transpose2d(v[0], v[1], stride, pad));
                (vec![rand_t(rng, &[n, ci, h, w]), rand_t(rng, &[ci, co, k, k])], f)
            },
        },
        OpCase {
            name: "group_norm",
            trial: |rng| {
                let groups = rng.random_range(1..=2);
                let c = groups * rng.random_range(1..=2);
                let s = [rng.random_range(1..=2), c, rng.random_range(1..=3), rng.random_range(2..=3)];
                let f: Build = Box::new(move |g, v| g.group_norm(v[0], groups, 1e-5));
                (vec![rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "rms_norm",
            trial: |rng| {
                let s = dims(rng, 2..=2, 5);
                let f: Build = Box::new(|g, v| g.rms_norm(v[0], 1e-6));
                (vec![away_from_zero(rng, &s)], f)
            },
        },
        OpCase {
            name: "embedding",
            trial: |rng| {
                let (vsz, d) = (rng.random_range(1..=5), rng.random_range(1..=4));
                let ids: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..vsz)).collect();
                let f: Build = Box::new(move |g, v| g.embedding(v[0], &ids));
                (vec![rand_t(rng, &[vsz, d])], f)
            },
        },
        OpCase {
            name: "cross_entropy",
            trial: |rng| {
                let (n, vsz) = (rng.random_range(1..=5), rng.random_range(2..=6));
                let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..vsz)).collect();
                let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
                mask[rng.random_range(0..n)] = true;
                let f: Build = Box::new(move |g, v| g.cross_entropy(v[0], &targets, Some(&mask)));
                let logits = Tensor::from_fn(&[n, vsz], |_| rng.random_range(-3.0..3.0));
                (vec![logits], f)
            },
        },
        OpCase {
            name: "mse",
            trial: |rng| {
                let s = dims(rng, 2..=2, 4);
                let f: Build = Box::new(|g, v| g.mse(v[0], v[1]));
                (vec![rand_t(rng, &s), rand_t(rng, &s)], f)
            },
        },
        OpCase {
            name: "rope",
            trial: |rng| {
                let s = [rng.random_range(1..=2), rng.random_range(1..=4), 2 * rng.random_range(1..=3)];
                let f: Build = Box::new(|g, v| g.rope(v[0], 100.0));
                (vec![rand_t(rng, &s)], f)
            },
        },
    ]
}

/// Runs `trials` random finite-difference checks of one op.
pub fn check_op(case: &OpCase, trials: usize, seed: u64) -> Result<GradCheckReport, TensorError> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for t in 0..trials {
        let (inputs, f) = (case.trial)(&mut rng);
        report.merge(check(&inputs, f, GradCheckConfig::default(), seed ^ (t as u64).wrapping_mul(0x9e37_79b9))?);
    }
    Ok(report)
}
