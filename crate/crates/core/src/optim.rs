//! Adam with bias correction and optional decoupled weight decay.

use crate::error::TensorError;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// AdamW: decay the weights directly instead of adding `wd·p` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: true,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One update of a flat parameter buffer in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<(), TensorError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TensorError::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps, wd) = (T::of(cfg.lr), T::of(cfg.eps), T::of(cfg.weight_decay));
    for i in 0..params.len() {
        let mut g = grads[i];
        if !cfg.decoupled {
            g += wd * params[i];
        }
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        if cfg.decoupled {
            params[i] -= lr * wd * params[i];
        }
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for every parameter of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Scalar = f32> {
    pub config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        AdamW {
            config,
            states: (0..store.len()).map(|i| AdamState::zeros(store.value(i).len())).collect(),
        }
    }

    /// Moment estimates of parameter `i`.
    pub fn state_mut(&mut self, i: usize) -> &mut AdamState<T> {
        &mut self.states[i]
    }

    /// Applies one step at learning rate `lr`; parameters without a gradient
    /// are left alone.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<(), TensorError> {
        if grads.len() != store.len() {
            return Err(TensorError::shape("adamw", &[store.len()], &[grads.len()]));
        }
        let cfg = AdamConfig { lr, ..self.config };
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = store.value_mut(i);
            if p.shape() != g.shape() {
                return Err(TensorError::shape("adamw", p.shape(), g.shape()));
            }
            adam_step(p.data_mut(), g.data(), &mut self.states[i], &cfg)?;
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Scalar>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.sq_norm().to_f64().unwrap())
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
