//! The tape: every op appends a node holding its value and enough saved
//! state to run its adjoint. Nodes only reference earlier nodes, so index
//! order is a topological order and backward is a single reverse sweep.

use crate::error::TensorError;
use crate::kernels::{self, MatmulDims, Window};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shape, broadcast_strides, numel, split_axis, strided_walk, Tensor};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    MatMul(Var, Var, MatmulDims),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, stride: usize, pad: usize },
    /// output is x̂ itself; `inv` holds one inverse std per normalized block
    GroupNorm { x: Var, block: usize, inv: Vec<T> },
    RmsNorm { x: Var, inv: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
    Mse(Var, Var),
    StopGradient,
    Rope { x: Var, base: f64 },
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation; build one per training step.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    /// (store uid, parameter index, leaf)
    bindings: Vec<(u64, usize, Var)>,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but an unreached node reports zeros.
    pub fn get_or_zeros(&self, g: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable parameter; its gradient is collected by [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        let v = self.leaf(store.value(index).clone());
        self.bindings.push((store.uid(), index, v));
        v
    }

    /// A parameter read as a constant (frozen for this graph).
    pub fn frozen(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        self.input(store.value(index).clone())
    }

    /// Per-parameter gradients of `store`, summed over every binding.
    pub fn param_grads(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; store.len()];
        for &(uid, idx, v) in &self.bindings {
            if uid != store.uid() {
                continue;
            }
            if let Some(g) = grads.get(v) {
                match &mut out[idx] {
                    Some(e) => e.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return ta.zip_map(tb, f);
        }
        let shape = broadcast_shape(op, ta.shape(), tb.shape())?;
        let (sa, sb) = (broadcast_strides(ta.shape(), &shape), broadcast_strides(tb.shape(), &shape));
        let mut ia = Vec::with_capacity(numel(&shape));
        strided_walk(&shape, &sa, |o| ia.push(o));
        let mut data = Vec::with_capacity(ia.len());
        let mut k = 0;
        strided_walk(&shape, &sb, |o| {
            data.push(f(ta.data()[ia[k]], tb.data()[o]));
            k += 1;
        });
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let t = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(t, Op::LeakyRelu(x, s), &[x])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu_fwd);
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    /// `ln(1 + eˣ)`, computed without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.value(x).map(softplus);
        self.push(t, Op::Softplus(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.exp());
        self.push(t, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.ln());
        self.push(t, Op::Log(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * v);
        self.push(t, Op::Square(x), &[x])
    }

    /// Batched matrix product, see [`MatmulDims`] for accepted shapes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (dims, shape) = MatmulDims::infer(self.shape(a), self.shape(b))?;
        let data = kernels::matmul(dims, self.value(a).data(), self.value(b).data());
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::MatMul(a, b, dims), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).permute(axes)?;
        Ok(self.push(t, Op::Permute(x, axes.to_vec()), &[x]))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var, TensorError> {
        let mut axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(TensorError::shape("transpose", self.shape(x), &[a, b]));
        }
        axes.swap(a, b);
        self.permute(x, &axes)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / T::of(v.len().max(1) as f64));
        self.push(t, Op::Mean(x), &[x])
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), TensorError> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::invalid(op, format!("axis {axis} out of range for {:?}", self.shape(x))));
        }
        Ok(())
    }

    fn reduced_shape(&self, x: Var, axis: usize, keepdim: bool) -> Vec<usize> {
        let mut s = self.shape(x).to_vec();
        if keepdim {
            s[axis] = 1;
        } else {
            s.remove(axis);
        }
        s
    }

    fn axis_sums(&self, x: Var, axis: usize) -> Vec<T> {
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + j) * inner + i];
                }
            }
        }
        out
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var, TensorError> {
        self.check_axis("sum_axis", x, axis)?;
        let t = Tensor::new(self.reduced_shape(x, axis, keepdim), self.axis_sums(x, axis))?;
        Ok(self.push(t, Op::SumAxis(x, axis), &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var, TensorError> {
        self.check_axis("mean_axis", x, axis)?;
        let n = T::of(self.shape(x)[axis] as f64);
        let data = self.axis_sums(x, axis).into_iter().map(|v| v / n).collect();
        let t = Tensor::new(self.reduced_shape(x, axis, keepdim), data)?;
        Ok(self.push(t, Op::MeanAxis(x, axis), &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, axis)?;
        let (o, n, i) = split_axis(self.shape(x), axis);
        let t = Tensor::new(self.shape(x).to_vec(), kernels::softmax(self.value(x).data(), o, n, i, false))?;
        Ok(self.push(t, Op::Softmax(x, axis), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("log_softmax", x, axis)?;
        let (o, n, i) = split_axis(self.shape(x), axis);
        let t = Tensor::new(self.shape(x).to_vec(), kernels::softmax(self.value(x).data(), o, n, i, true))?;
        Ok(self.push(t, Op::LogSoftmax(x, axis), &[x]))
    }

    /// `log Σ exp` along `axis` with max subtraction.
    pub fn log_sum_exp(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var, TensorError> {
        self.check_axis("log_sum_exp", x, axis)?;
        let (o, n, i) = split_axis(self.shape(x), axis);
        let data = kernels::log_sum_exp(self.value(x).data(), o, n, i);
        let t = Tensor::new(self.reduced_shape(x, axis, keepdim), data)?;
        Ok(self.push(t, Op::LogSumExp(x, axis), &[x]))
    }

    fn conv_window(&self, op: &'static str, x: &[usize], w: &[usize], in_ch: usize, stride: usize, pad: usize) -> Result<Window, TensorError> {
        if x.len() != 4 || w.len() != 4 || x[1] != in_ch {
            return Err(TensorError::shape(op, x, w));
        }
        let win = Window {
            c: x[1],
            h: x[2],
            w: x[3],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
        };
        if win.out_hw().is_none() {
            return Err(TensorError::invalid(op, format!("kernel {w:?} does not fit input {x:?} with pad {pad}")));
        }
        Ok(win)
    }

    /// `x: [n, c, h, w]`, `w: [o, c, kh, kw]` → `[n, o, oh, ow]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let win = self.conv_window("conv2d", &xs, &ws, ws.get(1).copied().unwrap_or(0), stride, pad)?;
        let (oh, ow) = win.out_hw().unwrap();
        let (n, o, p, kk) = (xs[0], ws[0], oh * ow, win.patch_len());
        let img = win.c * win.h * win.w;
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * o * p];
        for b in 0..n {
            let cols = kernels::im2col(win, &xd[b * img..(b + 1) * img]);
            T::gemm(o, kk, p, T::one(), wd, kk as isize, 1, &cols, p as isize, 1, T::zero(), &mut out[b * o * p..(b + 1) * o * p], p as isize, 1);
        }
        let t = Tensor::new(vec![n, o, oh, ow], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, stride, pad }, &[x, w]))
    }

    /// `x: [n, ci, h, w]`, `w: [ci, co, kh, kw]` → `[n, co, (h-1)s - 2p + kh, ..]`;
    /// the adjoint of [`Graph::conv2d`] with the same kernel layout.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || stride == 0 {
            return Err(TensorError::shape("conv_transpose2d", &xs, &ws));
        }
        let (n, ci, h, wi) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((wi - 1) * stride + kw).checked_sub(2 * pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::invalid("conv_transpose2d", "padding exceeds output"));
        };
        let win = Window {
            c: co,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad,
        };
        if win.out_hw() != Some((h, wi)) {
            return Err(TensorError::invalid("conv_transpose2d", "inconsistent geometry"));
        }
        let (hw, kk) = (h * wi, co * kh * kw);
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); n * co * oh * ow];
        let mut cols = vec![T::zero(); kk * hw];
        for b in 0..n {
            // cols = Wᵀ · x[b], W viewed as [ci, co·kh·kw]
            T::gemm(kk, ci, hw, T::one(), wd, 1, kk as isize, &xd[b * ci * hw..(b + 1) * ci * hw], hw as isize, 1, T::zero(), &mut cols, hw as isize, 1);
            kernels::col2im(win, &cols, &mut out[b * co * oh * ow..(b + 1) * co * oh * ow]);
        }
        let t = Tensor::new(vec![n, co, oh, ow], out)?;
        Ok(self.push(t, Op::ConvTranspose2d { x, w, stride, pad }, &[x, w]))
    }

    /// Normalizes `[n, c, ..]` over each group of `c / groups` channels and
    /// all trailing positions. No affine part; compose one with mul/add.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || s[1] % groups != 0 {
            return Err(TensorError::invalid("group_norm", format!("{groups} groups do not divide shape {s:?}")));
        }
        let block = numel(&s[1..]) / groups;
        let (xhat, inv) = kernels::standardize(self.value(x).data(), block, T::of(eps));
        let t = Tensor::new(s, xhat)?;
        Ok(self.push(t, Op::GroupNorm { x, block, inv }, &[x]))
    }

    /// `x / sqrt(mean(x²) + eps)` over the last axis.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        let Some(&d) = s.last() else {
            return Err(TensorError::invalid("rms_norm", "scalar input"));
        };
        let eps = T::of(eps);
        let xd = self.value(x).data();
        let mut y = vec![T::zero(); xd.len()];
        let mut inv = Vec::with_capacity(xd.len() / d.max(1));
        for (row, out) in xd.chunks(d).zip(y.chunks_mut(d)) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
            let r = T::one() / (ms + eps).sqrt();
            inv.push(r);
            for (o, &v) in out.iter_mut().zip(row) {
                *o = v * r;
            }
        }
        let t = Tensor::new(s, y)?;
        Ok(self.push(t, Op::RmsNorm { x, inv }, &[x]))
    }

    /// Rows of `table: [v, d]` selected by `ids` → `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(TensorError::invalid("embedding", format!("table must be a matrix, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(TensorError::IndexOutOfRange { index: i, bound: v });
            }
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(t, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Mean next-token cross-entropy of `logits: [n, v]` against `targets`,
    /// over rows whose mask flag is set (all rows when `mask` is `None`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || mask.is_some_and(|m| m.len() != targets.len()) {
            return Err(TensorError::shape("cross_entropy", &s, &[targets.len()]));
        }
        let (n, v) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::IndexOutOfRange { index: bad, bound: v });
        }
        let count = mask.map_or(n, |m| m.iter().filter(|&&b| b).count());
        if count == 0 {
            return Err(TensorError::AllMasked);
        }
        let w = T::one() / T::of(count as f64);
        let weights: Vec<T> = (0..n)
            .map(|i| if mask.is_none_or(|m| m[i]) { w } else { T::zero() })
            .collect();
        let probs = kernels::softmax(self.value(logits).data(), n, v, 1, false);
        let lse = kernels::log_sum_exp(self.value(logits).data(), n, v, 1);
        let ld = self.value(logits).data();
        let mut loss = T::zero();
        for i in 0..n {
            if weights[i] > T::zero() {
                loss += weights[i] * (lse[i] - ld[i * v + targets[i]]);
            }
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean squared difference of two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let d = self.value(a).zip_map(self.value(b), |x, y| (x - y) * (x - y)).map_err(|_| TensorError::shape("mse", self.shape(a), self.shape(b)))?;
        let t = Tensor::scalar(d.sum() / T::of(d.len().max(1) as f64));
        Ok(self.push(t, Op::Mse(a, b), &[a, b]))
    }

    /// Identity forward; blocks every gradient.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        let v = self.push(t, Op::StopGradient, &[x]);
        self.nodes[v.0].requires_grad = false;
        v
    }

    /// Forward value of `zq`, gradient of the identity into `zhat`:
    /// `zhat + sg(zq - zhat)`.
    pub fn straight_through(&mut self, zq: Var, zhat: Var) -> Result<Var, TensorError> {
        if self.shape(zq) != self.shape(zhat) {
            return Err(TensorError::shape("straight_through", self.shape(zq), self.shape(zhat)));
        }
        let diff = self.sub(zq, zhat)?;
        let diff = self.stop_gradient(diff);
        let out = self.add(zhat, diff)?;
        // report exactly zq forward; zhat + (zq - zhat) can differ in the last ulp
        self.nodes[out.0].value = self.value(zq).clone();
        Ok(out)
    }

    /// Rotary embedding over `[.., l, d]` with positions `0..l` along axis -2.
    pub fn rope(&mut self, x: Var, base: f64) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[s.len() - 1] % 2 != 0 {
            return Err(TensorError::invalid("rope", format!("needs [.., l, even d], got {s:?}")));
        }
        let (l, d) = (s[s.len() - 2], s[s.len() - 1]);
        let y = kernels::rope(self.value(x).data(), l, d, base, 1.0);
        let t = Tensor::new(s, y)?;
        Ok(self.push(t, Op::Rope { x, base }, &[x]))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, TensorError> {
        let rs = self.shape(root);
        if numel(rs) != 1 {
            return Err(TensorError::NonScalarRoot(rs.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::ones(rs));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let unary = |grads: &mut [Option<Tensor<T>>], x: Var, f: &dyn Fn(usize) -> T| {
            if rg(x) {
                let d = Tensor::from_fn(g.shape(), |k| g.data()[k] * f(k));
                acc(grads, x, d);
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g.reduce_to(val(*a).shape()));
                }
                if rg(*b) {
                    acc(grads, *b, g.reduce_to(val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g.reduce_to(val(*a).shape()));
                }
                if rg(*b) {
                    acc(grads, *b, g.map(|v| -v).reduce_to(val(*b).shape()));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let shape = g.shape();
                let ea = val(*a).broadcast_to(shape).expect("forward shape");
                let eb = val(*b).broadcast_to(shape).expect("forward shape");
                let is_div = matches!(node.op, Op::Div(..));
                if rg(*a) {
                    let d = if is_div { g.zip_map(&eb, |gv, bv| gv / bv) } else { g.zip_map(&eb, |gv, bv| gv * bv) };
                    acc(grads, *a, d.unwrap().reduce_to(val(*a).shape()));
                }
                if rg(*b) {
                    let d = if is_div {
                        Tensor::from_fn(shape, |k| -g.data()[k] * ea.data()[k] / (eb.data()[k] * eb.data()[k]))
                    } else {
                        g.zip_map(&ea, |gv, av| gv * av).unwrap()
                    };
                    acc(grads, *b, d.reduce_to(val(*b).shape()));
                }
            }
            Op::Scale(x, c) => unary(grads, *x, &|_| *c),
            Op::AddScalar(x) | Op::Reshape(x) => {
                if rg(*x) {
                    acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), g.data().to_vec()).unwrap());
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| if xv[k] > T::zero() { T::one() } else { T::zero() })
            }
            Op::LeakyRelu(x, s) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| if xv[k] > T::zero() { T::one() } else { *s })
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| gelu_grad(xv[k]))
            }
            Op::Tanh(x) => unary(grads, *x, &|k| T::one() - y.data()[k] * y.data()[k]),
            Op::Sigmoid(x) => unary(grads, *x, &|k| y.data()[k] * (T::one() - y.data()[k])),
            Op::Softplus(x) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| sigmoid(xv[k]))
            }
            Op::Exp(x) => unary(grads, *x, &|k| y.data()[k]),
            Op::Log(x) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| T::one() / xv[k])
            }
            Op::Square(x) => {
                let xv = val(*x).data();
                unary(grads, *x, &|k| T::of(2.0) * xv[k])
            }
            Op::MatMul(a, b, dims) => {
                let (da, db) = kernels::matmul_backward(*dims, val(*a).data(), val(*b).data(), g.data());
                if rg(*a) {
                    acc(grads, *a, Tensor::new(val(*a).shape().to_vec(), da).unwrap());
                }
                if rg(*b) {
                    acc(grads, *b, Tensor::new(val(*b).shape().to_vec(), db).unwrap());
                }
            }
            Op::Permute(x, axes) => {
                if rg(*x) {
                    let mut inv = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inv[a] = i;
                    }
                    acc(grads, *x, g.permute(&inv).unwrap());
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if rg(*x) {
                    let n = val(*x).len().max(1);
                    let s = if matches!(node.op, Op::Mean(_)) { g.item() / T::of(n as f64) } else { g.item() };
                    acc(grads, *x, Tensor::full(val(*x).shape(), s));
                }
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                if rg(*x) {
                    let xs = val(*x).shape();
                    let (_, n, inner) = split_axis(xs, *axis);
                    let c = if matches!(node.op, Op::MeanAxis(..)) { T::one() / T::of(n as f64) } else { T::one() };
                    let d = Tensor::from_fn(xs, |k| {
                        let (o, i) = (k / (n * inner), k % inner);
                        g.data()[o * inner + i] * c
                    });
                    acc(grads, *x, d);
                }
            }
            Op::Softmax(x, axis) | Op::LogSoftmax(x, axis) => {
                if rg(*x) {
                    let (outer, n, inner) = split_axis(y.shape(), *axis);
                    let log = matches!(node.op, Op::LogSoftmax(..));
                    let (yd, gd) = (y.data(), g.data());
                    let mut d = vec![T::zero(); yd.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            if log {
                                let s: T = (0..n).map(|j| gd[at(j)]).sum();
                                for j in 0..n {
                                    d[at(j)] = gd[at(j)] - yd[at(j)].exp() * s;
                                }
                            } else {
                                let s: T = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
                                for j in 0..n {
                                    d[at(j)] = yd[at(j)] * (gd[at(j)] - s);
                                }
                            }
                        }
                    }
                    acc(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
                }
            }
            Op::LogSumExp(x, axis) => {
                if rg(*x) {
                    let xs = val(*x).shape();
                    let (_, n, inner) = split_axis(xs, *axis);
                    let xd = val(*x).data();
                    let d = Tensor::from_fn(xs, |k| {
                        let (o, i) = (k / (n * inner), k % inner);
                        g.data()[o * inner + i] * (xd[k] - y.data()[o * inner + i]).exp()
                    });
                    acc(grads, *x, d);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let win = Window {
                    c: xs[1],
                    h: xs[2],
                    w: xs[3],
                    kh: ws[2],
                    kw: ws[3],
                    stride: *stride,
                    pad: *pad,
                };
                let (oh, ow) = win.out_hw().unwrap();
                let (n, o, p, kk) = (xs[0], ws[0], oh * ow, win.patch_len());
                let img = win.c * win.h * win.w;
                let (xd, wd, gd) = (val(*x).data(), val(*w).data(), g.data());
                let mut dw = vec![T::zero(); wd.len()];
                let mut dx = vec![T::zero(); xd.len()];
                let mut dcols = vec![T::zero(); kk * p];
                for b in 0..n {
                    let gb = &gd[b * o * p..(b + 1) * o * p];
                    if rg(*w) {
                        let cols = kernels::im2col(win, &xd[b * img..(b + 1) * img]);
                        T::gemm(o, p, kk, T::one(), gb, p as isize, 1, &cols, 1, p as isize, T::one(), &mut dw, kk as isize, 1);
                    }
                    if rg(*x) {
                        T::gemm(kk, o, p, T::one(), wd, 1, kk as isize, gb, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                        kernels::col2im(win, &dcols, &mut dx[b * img..(b + 1) * img]);
                    }
                }
                if rg(*x) {
                    acc(grads, *x, Tensor::new(xs.to_vec(), dx).unwrap());
                }
                if rg(*w) {
                    acc(grads, *w, Tensor::new(ws.to_vec(), dw).unwrap());
                }
            }
            Op::ConvTranspose2d { x, w, stride, pad } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let (n, ci, h, wi) = (xs[0], xs[1], xs[2], xs[3]);
                let (co, kh, kw) = (ws[1], ws[2], ws[3]);
                let (oh, ow) = (y.shape()[2], y.shape()[3]);
                let win = Window {
                    c: co,
                    h: oh,
                    w: ow,
                    kh,
                    kw,
                    stride: *stride,
                    pad: *pad,
                };
                let (hw, kk) = (h * wi, co * kh * kw);
                let (xd, wd, gd) = (val(*x).data(), val(*w).data(), g.data());
                let mut dw = vec![T::zero(); wd.len()];
                let mut dx = vec![T::zero(); xd.len()];
                for b in 0..n {
                    let dcols = kernels::im2col(win, &gd[b * co * oh * ow..(b + 1) * co * oh * ow]);
                    if rg(*x) {
                        T::gemm(ci, kk, hw, T::one(), wd, kk as isize, 1, &dcols, hw as isize, 1, T::zero(), &mut dx[b * ci * hw..(b + 1) * ci * hw], hw as isize, 1);
                    }
                    if rg(*w) {
                        let xb = &xd[b * ci * hw..(b + 1) * ci * hw];
                        T::gemm(ci, hw, kk, T::one(), xb, hw as isize, 1, &dcols, 1, hw as isize, T::one(), &mut dw, kk as isize, 1);
                    }
                }
                if rg(*x) {
                    acc(grads, *x, Tensor::new(xs.to_vec(), dx).unwrap());
                }
                if rg(*w) {
                    acc(grads, *w, Tensor::new(ws.to_vec(), dw).unwrap());
                }
            }
            Op::GroupNorm { x, block, inv } => {
                if rg(*x) {
                    let d = kernels::standardize_backward(y.data(), inv, g.data(), *block);
                    acc(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
                }
            }
            Op::RmsNorm { x, inv } => {
                if rg(*x) {
                    let dlen = *y.shape().last().unwrap();
                    let mut d = vec![T::zero(); y.len()];
                    for (r, &iv) in inv.iter().enumerate() {
                        let span = r * dlen..(r + 1) * dlen;
                        let (yr, gr) = (&y.data()[span.clone()], &g.data()[span.clone()]);
                        let m = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / T::of(dlen as f64);
                        for ((o, &yv), &gv) in d[span].iter_mut().zip(yr).zip(gr) {
                            *o = iv * (gv - yv * m);
                        }
                    }
                    acc(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
                }
            }
            Op::Embedding { table, ids } => {
                if rg(*table) {
                    let ts = val(*table).shape();
                    let dd = ts[1];
                    let mut d = vec![T::zero(); numel(ts)];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &gv) in d[id * dd..(id + 1) * dd].iter_mut().zip(&g.data()[r * dd..(r + 1) * dd]) {
                            *o += gv;
                        }
                    }
                    acc(grads, *table, Tensor::new(ts.to_vec(), d).unwrap());
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                if rg(*logits) {
                    let ls = val(*logits).shape();
                    let v = ls[1];
                    let up = g.item();
                    let mut d = vec![T::zero(); probs.len()];
                    for (r, &w) in weights.iter().enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        for j in 0..v {
                            d[r * v + j] = up * w * probs[r * v + j];
                        }
                        d[r * v + targets[r]] -= up * w;
                    }
                    acc(grads, *logits, Tensor::new(ls.to_vec(), d).unwrap());
                }
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let c = T::of(2.0) * g.item() / T::of(ad.len().max(1) as f64);
                if rg(*a) {
                    acc(grads, *a, Tensor::from_fn(val(*a).shape(), |k| c * (ad[k] - bd[k])));
                }
                if rg(*b) {
                    acc(grads, *b, Tensor::from_fn(val(*b).shape(), |k| c * (bd[k] - ad[k])));
                }
            }
            Op::Rope { x, base } => {
                if rg(*x) {
                    let s = y.shape();
                    let (l, d) = (s[s.len() - 2], s[s.len() - 1]);
                    let dx = kernels::rope(g.data(), l, d, *base, -1.0);
                    acc(grads, *x, Tensor::new(s.to_vec(), dx).unwrap());
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(v: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    half * v * (T::one() + (c * (v + a * v * v * v)).tanh())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    let t = (c * (v + a * v * v * v)).tanh();
    half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * v * v)
}
