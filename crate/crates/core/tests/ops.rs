//! Forward semantics against direct oracles, gradient routing and the
//! optimizer and checkpoint contracts.

use molmm_core::checkpoint::{self, CheckpointError};
use molmm_core::{adam_step, AdamConfig, AdamState, AdamW, Graph, ParamStore, Tensor, TensorError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

#[test]
fn identity_kernel_conv_is_identity() {
    let x = random(&[2, 3, 5, 4], 1);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let (xv, wv) = (g.input(x.clone()), g.input(w));
    let y = g.conv2d(xv, wv, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

proptest! {
    #[test]
    fn conv_matches_direct_sum(n in 1usize..3, c in 1usize..4, o in 1usize..4, k in 1usize..4,
                               stride in 1usize..3, pad in 0usize..2, extra in 0usize..4, seed in 0u64..1000) {
        let h = k + extra;
        let x = random(&[n, c, h, h + 1], seed);
        let w = random(&[o, c, k, k], seed + 1);
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
        let y = g.conv2d(xv, wv, stride, pad).unwrap();
        let expect = naive_conv(&x, &w, stride, pad);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_the_adjoint(c in 1usize..4, o in 1usize..4, k in 1usize..5,
                                      stride in 1usize..3, out_hw in 1usize..4, seed in 0u64..1000) {
        let pad = (k - 1) / 2;
        // input size that conv2d maps exactly onto out_hw
        let h = (out_hw - 1) * stride + k - 2 * pad;
        let x = random(&[1, c, h, h], seed);
        let w = random(&[o, c, k, k], seed + 7);
        let yv = random(&[1, o, out_hw, out_hw], seed + 9);
        let mut g = Graph::new();
        let (xn, wn, yn) = (g.input(x.clone()), g.input(w), g.input(yv.clone()));
        let cx = g.conv2d(xn, wn, stride, pad).unwrap();
        let ty = g.conv_transpose2d(yn, wn, stride, pad).unwrap();
        prop_assert_eq!(g.shape(ty), x.shape());
        let lhs: f64 = g.value(cx).data().iter().zip(yv.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.value(ty).data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6, batch in 1usize..4, shared in any::<bool>(), seed in 0u64..1000) {
        let a = random(&[batch, m, k], seed);
        let b = if shared { random(&[k, n], seed + 1) } else { random(&[batch, k, n], seed + 1) };
        let mut g = Graph::new();
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let c = g.matmul(av, bv).unwrap();
        for bi in 0..batch {
            for i in 0..m {
                for j in 0..n {
                    let bo = if shared { 0 } else { bi * k * n };
                    let s: f64 = (0..k).map(|p| a.data()[(bi * m + i) * k + p] * b.data()[bo + p * n + j]).sum();
                    prop_assert!((g.value(c).data()[(bi * m + i) * n + j] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let n = vals.len();
        let mut g = Graph::new();
        let x = g.input(t(&[1, n], &vals));
        let s = g.softmax(x, 1).unwrap();
        let total: f64 = g.value(s).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn log_sum_exp_is_stable() {
    let mut g = Graph::new();
    let x = g.input(t(&[3], &[1000.0, 1000.0, 1000.0]));
    let l = g.log_sum_exp(x, 0, false).unwrap();
    assert!((g.value(l).item() - (1000.0 + 3f64.ln())).abs() < 1e-9);
}

#[test]
fn stop_gradient_blocks_everything() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[1.0, -2.0, 3.0]));
    let s = g.stop_gradient(x);
    assert_eq!(g.value(s), g.value(x));
    let sq = g.square(s);
    let other = g.mul(x, s).unwrap();
    let total = g.add(sq, other).unwrap();
    let l = g.sum(total);
    let grads = g.backward(l).unwrap();
    // only the direct x factor of x * s carries gradient: d/dx = s
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 3.0]);
    assert!(grads.get(s).is_none());

    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[0.5, 0.25]));
    let s = g.stop_gradient(x);
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).is_none_or(|d| d.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn straight_through_routes_identity_to_zhat() {
    let mut g = Graph::new();
    let zq = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let zhat = g.leaf(t(&[2, 2], &[0.9, 2.2, 2.7, 4.4]));
    let st = g.straight_through(zq, zhat).unwrap();
    assert_eq!(g.value(st), g.value(zq));
    let w = g.input(t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]));
    let y = g.mul(st, w).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(zhat).unwrap().data(), &[1.0, -1.0, 0.5, 2.0]);
    assert!(grads.get(zq).is_none_or(|d| d.data().iter().all(|&v| v == 0.0)));
    assert!(g.straight_through(zq, w).is_ok());
    let bad = g.input(t(&[4], &[0.0; 4]));
    assert!(matches!(g.straight_through(zq, bad), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn shared_subexpressions_accumulate() {
    // f = x*x + x  →  df/dx = 2x + 1
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[1.0, 2.0, -0.5]));
    let sq = g.mul(x, x).unwrap();
    let f = g.add(sq, x).unwrap();
    let l = g.sum(f);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 5.0, 0.0]);

    // h = u + u with u = a*b  →  dh/da = 2b
    let mut g = Graph::new();
    let a = g.leaf(t(&[1], &[3.0]));
    let b = g.leaf(t(&[1], &[-2.0]));
    let u = g.mul(a, b).unwrap();
    let h = g.add(u, u).unwrap();
    let l = g.sum(h);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[-4.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[6.0]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[4, 5]));
    let e = g.matmul(a, b).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    assert!(matches!(g.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    let l = g.input(Tensor::zeros(&[2, 3]));
    assert_eq!(g.cross_entropy(l, &[0, 1], Some(&[false, false])).unwrap_err(), TensorError::AllMasked);
    assert!(g.backward(l).is_err());
}

#[test]
fn adam_two_steps_on_a_parabola() {
    // hand iteration: g1 = 2, m̂ = 2, v̂ = 4 → w = 1 - 0.1·2/(2+ε) ≈ 0.9
    // g2 = 1.8: m = 0.18 + 0.18 = ..., computed below in closed form
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut w = [1.0f64];
    let mut st = AdamState::zeros(1);
    let (mut m, mut v, mut hw) = (0.0, 0.0, 1.0f64);
    let mut f_prev = hw * hw;
    for step in 1..=2 {
        let g = 2.0 * w[0];
        adam_step(&mut w, &[g], &mut st, &cfg).unwrap();
        let hg = 2.0 * hw;
        m = b1 * m + (1.0 - b1) * hg;
        v = b2 * v + (1.0 - b2) * hg * hg;
        let mhat = m / (1.0 - b1.powi(step));
        let vhat = v / (1.0 - b2.powi(step));
        hw -= 0.1 * mhat / (vhat.sqrt() + eps);
        assert!((w[0] - hw).abs() < 1e-15);
        assert!(w[0] * w[0] < f_prev);
        f_prev = w[0] * w[0];
    }
}

#[test]
fn decoupled_decay_shrinks_weights_without_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.add("w", t(&[2], &[1.0, -1.0]));
    let mut opt = AdamW::new(
        &store,
        AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        },
    );
    opt.step(&mut store, &[Some(Tensor::zeros(&[2]))], 0.5).unwrap();
    assert_eq!(store.value(0).data(), &[0.95, -0.95]);
}

#[test]
fn checkpoint_round_trip_and_layout() {
    let mut store = ParamStore::<f32>::new();
    store.add("enc.w", Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap());
    store.add("b", Tensor::scalar(0.25));
    let bytes = checkpoint::to_bytes(&store);
    assert_eq!(&bytes[..5], b"MFCK1");
    assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 5);
    assert_eq!(&bytes[13..18], b"enc.w");
    assert_eq!(u64::from_le_bytes(bytes[18..26].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[26..34].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[34..42].try_into().unwrap()), 3);
    assert_eq!(f32::from_le_bytes(bytes[42..46].try_into().unwrap()), 1.0);
    assert_eq!(bytes.len(), 5 + (8 + 5 + 8 + 16 + 24) + (8 + 1 + 8 + 4));

    let back: ParamStore<f32> = checkpoint::read_params(bytes.as_slice()).unwrap();
    assert_eq!(back, store);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.mfck");
    checkpoint::save(&store, &path).unwrap();
    let mut fresh = ParamStore::<f32>::new();
    fresh.add("b", Tensor::scalar(0.0));
    fresh.add("enc.w", Tensor::zeros(&[2, 3]));
    checkpoint::restore(&mut fresh, &checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(fresh.value(1), store.value(0));

    assert!(matches!(checkpoint::read_params::<f32, _>(&b"MFCK2"[..]), Err(CheckpointError::BadMagic)));
    assert!(matches!(
        checkpoint::read_params::<f32, _>(&bytes[..bytes.len() - 2]),
        Err(CheckpointError::Truncated(_))
    ));
}

/// A tiny regression MLP trained for a few steps; returns the loss curve
/// and the final parameter bytes.
fn train_tiny(seed: u64) -> (Vec<f32>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let w1 = store.add("w1", Tensor::randn(&[4, 8], 0.5, &mut rng));
    let w2 = store.add("w2", Tensor::randn(&[8, 1], 0.5, &mut rng));
    let x = Tensor::<f32>::uniform(&[16, 4], 1.0, &mut rng);
    let y = Tensor::<f32>::from_fn(&[16, 1], |i| x.row(i).iter().sum::<f32>().sin());
    let mut opt = AdamW::new(&store, AdamConfig::default());
    let mut curve = Vec::new();
    for _ in 0..50 {
        let mut g = Graph::new();
        let (a, b) = (g.param(&store, w1), g.param(&store, w2));
        let xi = g.input(x.clone());
        let yi = g.input(y.clone());
        let h = g.matmul(xi, a).unwrap();
        let h = g.gelu(h);
        let p = g.matmul(h, b).unwrap();
        let l = g.mse(p, yi).unwrap();
        curve.push(g.value(l).item());
        let grads = g.backward(l).unwrap();
        let pg = g.param_grads(&grads, &store);
        opt.step(&mut store, &pg, 1e-2).unwrap();
    }
    (curve, checkpoint::to_bytes(&store))
}

#[test]
fn same_seed_same_trajectory() {
    let (c1, p1) = train_tiny(42);
    let (c2, p2) = train_tiny(42);
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
    assert!(c1.last().unwrap() < &c1[0]);
    let (c3, _) = train_tiny(43);
    assert_ne!(c1, c3);
}
