//! Forward and adjoint kernels on raw buffers, shared by the graph ops.

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::numel;

/// Batched matmul geometry: `a` is `[.., m, k]`, `b` is `[.., k, n]` with the
/// same leading axes, or a plain `[k, n]` shared by every batch.
#[derive(Debug, Clone, Copy)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
}

impl MatmulDims {
    pub fn infer(a: &[usize], b: &[usize]) -> Result<(Self, Vec<usize>), TensorError> {
        let err = || TensorError::shape("matmul", a, b);
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let lead_a = &a[..a.len() - 2];
        let lead_b = &b[..b.len() - 2];
        let shared_rhs = lead_b.is_empty();
        if !shared_rhs && lead_a != lead_b {
            return Err(err());
        }
        let mut out = lead_a.to_vec();
        out.extend([m, n]);
        Ok((
            MatmulDims {
                batch: numel(lead_a),
                m,
                k,
                n,
                shared_rhs,
            },
            out,
        ))
    }
}

pub fn matmul<T: Scalar>(d: MatmulDims, a: &[T], b: &[T]) -> Vec<T> {
    let MatmulDims { batch, m, k, n, shared_rhs } = d;
    let mut c = vec![T::zero(); batch * m * n];
    if shared_rhs && batch > 1 {
        // one tall gemm instead of many short ones
        T::gemm(batch * m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, T::zero(), &mut c, n as isize, 1);
        return c;
    }
    for i in 0..batch {
        let bo = if shared_rhs { 0 } else { i * k * n };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a[i * m * k..(i + 1) * m * k],
            k as isize,
            1,
            &b[bo..bo + k * n],
            n as isize,
            1,
            T::zero(),
            &mut c[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
    c
}

/// `(da, db)` for `c = a · b` given `dc`.
pub fn matmul_backward<T: Scalar>(d: MatmulDims, a: &[T], b: &[T], dc: &[T]) -> (Vec<T>, Vec<T>) {
    let MatmulDims { batch, m, k, n, shared_rhs } = d;
    let mut da = vec![T::zero(); batch * m * k];
    let mut db = vec![T::zero(); if shared_rhs { k * n } else { batch * k * n }];
    if shared_rhs {
        // da = dc · bᵀ over all rows; db = aᵀ · dc summed over the batch
        T::gemm(batch * m, n, k, T::one(), dc, n as isize, 1, b, 1, n as isize, T::zero(), &mut da, k as isize, 1);
        T::gemm(k, batch * m, n, T::one(), a, 1, k as isize, dc, n as isize, 1, T::zero(), &mut db, n as isize, 1);
        return (da, db);
    }
    for i in 0..batch {
        let (ao, bo, co) = (i * m * k, i * k * n, i * m * n);
        T::gemm(
            m,
            n,
            k,
            T::one(),
            &dc[co..co + m * n],
            n as isize,
            1,
            &b[bo..bo + k * n],
            1,
            n as isize,
            T::zero(),
            &mut da[ao..ao + m * k],
            k as isize,
            1,
        );
        T::gemm(
            k,
            m,
            n,
            T::one(),
            &a[ao..ao + m * k],
            1,
            k as isize,
            &dc[co..co + m * n],
            n as isize,
            1,
            T::zero(),
            &mut db[bo..bo + k * n],
            n as isize,
            1,
        );
    }
    (da, db)
}

/// Geometry of a 2D convolution window sweep over a `[c, h, w]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let (h, w) = (self.h + 2 * self.pad, self.w + 2 * self.pad);
        if self.stride == 0 || h < self.kh || w < self.kw {
            return None;
        }
        Some(((h - self.kh) / self.stride + 1, (w - self.kw) / self.stride + 1))
    }

    /// Rows of the column matrix: one per (channel, ky, kx).
    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds an image into a `[c·kh·kw, oh·ow]` column matrix.
pub fn im2col<T: Scalar>(win: Window, img: &[T]) -> Vec<T> {
    let (oh, ow) = win.out_hw().expect("valid window");
    let p = oh * ow;
    let mut cols = vec![T::zero(); win.patch_len() * p];
    for c in 0..win.c {
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = (c * win.kh + ky) * win.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    if iy < 0 || iy >= win.h as isize {
                        continue;
                    }
                    let src = &img[(c * win.h + iy as usize) * win.w..][..win.w];
                    for ox in 0..ow {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        if ix >= 0 && ix < win.w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub fn col2im<T: Scalar>(win: Window, cols: &[T], img: &mut [T]) {
    let (oh, ow) = win.out_hw().expect("valid window");
    let p = oh * ow;
    for c in 0..win.c {
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = (c * win.kh + ky) * win.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                    if iy < 0 || iy >= win.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * win.h + iy as usize) * win.w..][..win.w];
                    for ox in 0..ow {
                        let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                        if ix >= 0 && ix < win.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Softmax along the middle axis of an `(outer, n, inner)` view.
pub fn softmax<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize, log: bool) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mx = (0..n).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..n {
                let e = (x[at(j)] - mx).exp();
                y[at(j)] = e;
                s += e;
            }
            if log {
                let ls = s.ln();
                for j in 0..n {
                    y[at(j)] = x[at(j)] - mx - ls;
                }
            } else {
                for j in 0..n {
                    y[at(j)] /= s;
                }
            }
        }
    }
    y
}

/// Stable `log Σ exp` along the middle axis; output is `(outer, inner)`.
pub fn log_sum_exp<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mx = (0..n).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
            let s: T = (0..n).map(|j| (x[at(j)] - mx).exp()).sum();
            y[o * inner + i] = mx + s.ln();
        }
    }
    y
}

/// Normalizes each contiguous block of `block` values to zero mean and unit
/// variance; returns `(xhat, inv_std per block)`.
pub fn standardize<T: Scalar>(x: &[T], block: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let nb = x.len() / block;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); nb];
    let bn = T::of(block as f64);
    for b in 0..nb {
        let s = &x[b * block..(b + 1) * block];
        let mean = s.iter().copied().sum::<T>() / bn;
        let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / bn;
        let is = T::one() / (var + eps).sqrt();
        inv[b] = is;
        for (o, &v) in xhat[b * block..(b + 1) * block].iter_mut().zip(s) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv)
}

/// Adjoint of [`standardize`].
pub fn standardize_backward<T: Scalar>(xhat: &[T], inv: &[T], dy: &[T], block: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let bn = T::of(block as f64);
    for (b, &is) in inv.iter().enumerate() {
        let r = b * block..(b + 1) * block;
        let (xh, g) = (&xhat[r.clone()], &dy[r.clone()]);
        let mg = g.iter().copied().sum::<T>() / bn;
        let mgx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / bn;
        for ((o, &gi), &xi) in dx[r].iter_mut().zip(g).zip(xh) {
            *o = is * (gi - mg - xi * mgx);
        }
    }
    dx
}

/// Rotary position embedding over `[.., l, d]` with positions `0..l`.
/// `sign = -1` applies the inverse rotation.
pub fn rope<T: Scalar>(x: &[T], l: usize, d: usize, base: f64, sign: f64) -> Vec<T> {
    let mut y = x.to_vec();
    let half = d / 2;
    // (sin, cos) per (position, frequency)
    let table: Vec<(T, T)> = (0..l)
        .flat_map(|pos| {
            (0..half).map(move |i| {
                let f = base.powf(-2.0 * i as f64 / d as f64);
                let (s, c) = (sign * pos as f64 * f).sin_cos();
                (T::of(s), T::of(c))
            })
        })
        .collect();
    for (row, chunk) in y.chunks_mut(d).enumerate() {
        let pos = row % l;
        for (i, &(s, c)) in table[pos * half..(pos + 1) * half].iter().enumerate() {
            let (a, b) = (chunk[2 * i], chunk[2 * i + 1]);
            chunk[2 * i] = a * c - b * s;
            chunk[2 * i + 1] = a * s + b * c;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_identity_kernel() {
        let win = Window {
            c: 2,
            h: 3,
            w: 3,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
        };
        let img: Vec<f64> = (0..18).map(f64::from).collect();
        assert_eq!(im2col(win, &img), img);
    }

    #[test]
    fn col2im_is_the_adjoint() {
        // <im2col(x), y> = <x, col2im(y)>
        let win = Window {
            c: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let cols = im2col(win, &x);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let mut back = vec![0.0; x.len()];
        col2im(win, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn rope_inverse() {
        let x: Vec<f64> = (0..24).map(|i| i as f64 * 0.3 - 2.0).collect();
        let y = rope(&x, 3, 4, 10000.0, 1.0);
        let z = rope(&y, 3, 4, 10000.0, -1.0);
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
        // position 0 is untouched
        assert_eq!(&y[..4], &x[..4]);
    }
}
