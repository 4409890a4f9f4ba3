use molmm_chem::{parse_smiles, render, MolImage};
use molmm_core::{Graph, Tensor};
use molmm_vq::model::images_to_tensor;
use molmm_vq::train::split_indices;
use molmm_vq::{
    adaptive_lambda2, gan_losses, perceptual_loss, quantize, read_token_dump, train_vq, vqvae_loss, write_token_dump,
    TokenRecord, VqConfig, VqError, VqModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> VqConfig {
    VqConfig {
        channels: vec![8, 8, 8],
        n_codes: 32,
        code_dim: 4,
        disc_channels: 4,
        percep_channels: 4,
        steps: 40,
        percep_steps: 10,
        batch_size: 4,
        eval_every: 20,
        ..VqConfig::default()
    }
}

fn images(smiles: &[&str]) -> Vec<MolImage> {
    smiles.iter().map(|s| render(&parse_smiles(s).unwrap(), 64).unwrap()).collect()
}

const MOLS: &[&str] = &["c1ccccc1O", "CCN(CC)CC", "O=C(O)c1ccccc1", "C1CCNCC1", "CC(=O)Nc1ccc(O)cc1", "c1ccc2ccccc2c1"];

fn brute_force(code: &[f32], book: &[Vec<f32>]) -> usize {
    let dists: Vec<f64> = book
        .iter()
        .map(|e| e.iter().zip(code).map(|(&a, &b)| (b as f64 - a as f64).powi(2)).sum())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).unwrap()
}

#[test]
fn quantize_matches_brute_force_on_10k_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut total = 0;
    for round in 0..10 {
        let (n, d) = (16, 4);
        let mut book: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // exact duplicates force ties the rule must resolve
        book[9] = book[3].clone();
        if round % 2 == 0 {
            book[15] = book[0].clone();
        }
        let cb = Tensor::new(vec![n, d], book.concat()).unwrap();
        let codes: Vec<f32> = (0..1000 * d).map(|_| rng.random_range(-1.2..1.2)).collect();
        let z = Tensor::new(vec![10, 100, d], codes.clone()).unwrap();
        let (zq, idx) = quantize(&z, &cb).unwrap();
        assert_eq!(zq.shape(), z.shape());
        for (i, c) in codes.chunks(d).enumerate() {
            total += 1;
            if idx[i] != brute_force(c, &book) || zq.data()[i * d..(i + 1) * d] != book[idx[i]][..] {
                mismatches += 1;
            }
            assert_ne!(idx[i], 9);
            if round % 2 == 0 {
                assert_ne!(idx[i], 15);
            }
        }
    }
    assert_eq!(total, 10_000);
    assert_eq!(mismatches, 0);
}

#[test]
fn equidistant_code_takes_lower_index() {
    let cb = Tensor::new(vec![4, 2], vec![5.0, 5.0, 1.0, 0.0, 9.0, 9.0, -1.0, 0.0]).unwrap();
    let (_, idx) = quantize(&Tensor::new(vec![1, 1, 2], vec![0.0, 0.0]).unwrap(), &cb).unwrap();
    assert_eq!(idx, vec![1]);
}

#[test]
fn vqvae_terms_vanish_at_their_fixed_points() {
    let mut g = Graph::new();
    let z = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
    let x = Tensor::new(vec![1, 3, 2, 2], vec![0.5; 12]).unwrap();
    let (zv, zq, xv, xh) = (g.leaf(z.clone()), g.leaf(z), g.leaf(x.clone()), g.leaf(x));
    let t = vqvae_loss(&mut g, xv, zv, zq, xh).unwrap();
    assert_eq!(g.value(t.rec).item(), 0.0);
    assert_eq!(g.value(t.codebook).item(), 0.0);
    assert_eq!(g.value(t.commit).item(), 0.0);
    let bad = g.leaf(Tensor::zeros(&[3, 2]));
    assert!(vqvae_loss(&mut g, xv, zv, bad, xh).is_err());
}

/// Which parameter groups of the generator and discriminator receive a
/// non-zero gradient from each loss term.
#[test]
fn gradient_routing_follows_stop_gradients() {
    let model = VqModel::new(small()).unwrap();
    let imgs = images(&MOLS[..2]);
    let refs: Vec<&MolImage> = imgs.iter().collect();
    let mut g = Graph::new();
    let x = g.input(images_to_tensor(&refs, 64).unwrap());
    let f = model.forward(&mut g, x, true).unwrap();
    let t = vqvae_loss(&mut g, x, f.zhat, f.zq, f.xhat).unwrap();
    let p = perceptual_loss(&mut g, &model.perceptual, x, f.xhat).unwrap();
    let (gan_g, gan_d) = gan_losses(&mut g, &model.discriminator, x, f.xhat).unwrap();

    let gen = &model.generator.store;
    let group = |name: &str| -> &'static str {
        if name == "codebook" {
            "codebook"
        } else if name.starts_with("enc") {
            "encoder"
        } else {
            "decoder"
        }
    };
    let touched = |root| {
        let grads = g.backward(root).unwrap();
        let pg = g.param_grads(&grads, gen);
        let mut hit = std::collections::BTreeSet::new();
        for (i, gr) in pg.iter().enumerate() {
            if gr.as_ref().is_some_and(|t| t.data().iter().any(|&v| v != 0.0)) {
                hit.insert(group(gen.name(i)));
            }
        }
        let dg = g.param_grads(&grads, &model.discriminator.store);
        if dg.iter().flatten().any(|t| t.data().iter().any(|&v| v != 0.0)) {
            hit.insert("discriminator");
        }
        hit.into_iter().collect::<Vec<_>>()
    };
    assert_eq!(touched(t.rec), ["decoder", "encoder"]);
    assert_eq!(touched(t.codebook), ["codebook"]);
    assert_eq!(touched(t.commit), ["encoder"]);
    assert_eq!(touched(p), ["decoder", "encoder"]);
    assert_eq!(touched(gan_g), ["decoder", "encoder"]);
    assert_eq!(touched(gan_d), ["discriminator"]);
}

#[test]
fn zero_logit_discriminator_gives_log_two_losses() {
    let mut model = VqModel::new(small()).unwrap();
    let last = model.discriminator.net.last().to_owned();
    let d = &mut model.discriminator.store;
    d.value_mut(last.weight).data_mut().fill(0.0);
    d.value_mut(last.bias).data_mut().fill(0.0);
    let imgs = images(&MOLS[..1]);
    let mut g = Graph::new();
    let x = g.input(images_to_tensor(&[&imgs[0]], 64).unwrap());
    let f = model.forward(&mut g, x, false).unwrap();
    let (lg, ld) = gan_losses(&mut g, &model.discriminator, x, f.xhat).unwrap();
    let ln2 = std::f32::consts::LN_2;
    assert!((g.value(lg).item() - ln2).abs() < 1e-5);
    assert!((g.value(ld).item() - 2.0 * ln2).abs() < 1e-5);
}

/// λ₂ against norms of finite-difference gradients over the last decoder weight.
#[test]
fn adaptive_weight_matches_finite_differences() {
    let model = VqModel::new(small()).unwrap();
    let imgs = images(&MOLS[..2]);
    let refs: Vec<&MolImage> = imgs.iter().collect();
    let x = images_to_tensor(&refs, 64).unwrap();
    let last = model.generator.last_decoder_weight();

    let losses = |m: &VqModel| -> (f64, f64) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let f = m.forward(&mut g, xv, false).unwrap();
        let rec = g.mse(f.xhat, xv).unwrap();
        let p = perceptual_loss(&mut g, &m.perceptual, xv, f.xhat).unwrap();
        let (lg, _) = gan_losses(&mut g, &m.discriminator, xv, f.xhat).unwrap();
        let r = g.value(rec).item() as f64 + m.config.lambda1 * g.value(p).item() as f64;
        (r, g.value(lg).item() as f64)
    };

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let f = model.forward(&mut g, xv, true).unwrap();
    let rec = g.mse(f.xhat, xv).unwrap();
    let p = perceptual_loss(&mut g, &model.perceptual, xv, f.xhat).unwrap();
    let pw = g.scale(p, model.config.lambda1);
    let rl = g.add(rec, pw).unwrap();
    let (lg, _) = gan_losses(&mut g, &model.discriminator, xv, f.xhat).unwrap();
    let gr = g.param_grads(&g.backward(rl).unwrap(), &model.generator.store)[last].clone().unwrap();
    let gg = g.param_grads(&g.backward(lg).unwrap(), &model.generator.store)[last].clone().unwrap();
    let lambda = adaptive_lambda2(&gr, &gg, 1e-6, 1e4);

    let eps = 1e-2f32;
    let (mut nr, mut ng) = (0.0, 0.0);
    for i in 0..gr.len() {
        let mut m = model.clone();
        m.generator.store.value_mut(last).data_mut()[i] += eps;
        let (rp, gp) = losses(&m);
        m.generator.store.value_mut(last).data_mut()[i] -= 2.0 * eps;
        let (rm, gm) = losses(&m);
        nr += ((rp - rm) / (2.0 * eps as f64)).powi(2);
        ng += ((gp - gm) / (2.0 * eps as f64)).powi(2);
    }
    let fd = nr.sqrt() / (ng.sqrt() + 1e-6);
    assert!((lambda - fd).abs() / fd < 0.05, "λ₂ {lambda} vs finite differences {fd}");
}

#[test]
fn perceptual_distance_properties() {
    let cfg = VqConfig {
        steps: 1,
        percep_steps: 60,
        ..small()
    };
    let imgs = images(MOLS);
    let (model, _) = train_vq(&imgs, &cfg).unwrap();
    let blank = MolImage::blank(64, 64);
    let dist = |a: &MolImage, b: &MolImage| {
        let mut g = Graph::new();
        let x = g.input(images_to_tensor(&[a], 64).unwrap());
        let y = g.input(images_to_tensor(&[b], 64).unwrap());
        let l = perceptual_loss(&mut g, &model.perceptual, x, y).unwrap();
        g.value(l).item()
    };
    assert_eq!(dist(&imgs[0], &imgs[0]), 0.0);
    assert_eq!(dist(&imgs[0], &imgs[1]), dist(&imgs[1], &imgs[0]));
    for img in &imgs {
        assert!(dist(img, &blank) > 0.0);
    }
}

#[test]
fn single_image_overfits() {
    let cfg = VqConfig {
        steps: 500,
        percep_steps: 50,
        batch_size: 1,
        eval_every: 100,
        ..VqConfig::default()
    };
    let imgs = images(&MOLS[..1]);
    let (_, report) = train_vq(&imgs, &cfg).unwrap();
    let first = report.steps[0].l_rec;
    assert!(report.best.l_rec < 0.1 * first, "{} vs initial {first}", report.best.l_rec);
}

#[test]
fn training_is_deterministic_and_counts_tokens() {
    let cfg = VqConfig {
        gan_start_frac: 0.5,
        ..small()
    };
    let imgs = images(MOLS);
    let (m1, r1) = train_vq(&imgs, &cfg).unwrap();
    let (m2, r2) = train_vq(&imgs, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert!(r1.steps[30].l_gan_d > 0.0 && r1.steps[10].l_gan_d == 0.0);
    assert!(r1.steps.iter().all(|s| s.all_finite() && s.l_rec >= 0.0));
    let h_w = cfg.tokens_per_image() as u64;
    assert_eq!(r1.usage.iter().sum::<u64>(), h_w * r1.images_seen as u64);
    let per_epoch: u64 = r1.epoch_usage.iter().flatten().sum();
    assert_eq!(per_epoch, h_w * r1.images_seen as u64);
    // five training images in batches of four: 4, 1, 4, 1, ...
    assert_eq!(r1.train_count, 5);
    assert_eq!(r1.images_seen, 20 * 5);
}

#[test]
fn tokens_round_trip_through_the_decoder() {
    let model = VqModel::new(small()).unwrap();
    let imgs = images(&MOLS[..3]);
    for img in &imgs {
        let toks = model.image_to_tokens(img).unwrap();
        assert_eq!(toks.len(), 64);
        assert_eq!(model.tokens_to_image(&toks).unwrap(), model.reconstruct(img).unwrap());
    }
    assert!(matches!(
        model.tokens_to_image(&[999; 64]),
        Err(VqError::IndexOutOfRange { index: 999, size: 32 })
    ));
    assert!(matches!(model.tokens_to_image(&[0; 63]), Err(VqError::TokenCount { .. })));
    assert!(model.image_to_tokens(&MolImage::blank(32, 32)).is_err());
}

#[test]
fn checkpoints_and_token_dumps_round_trip() {
    let imgs = images(MOLS);
    let (model, _) = train_vq(&imgs, &small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vq.mfck");
    model.save(&path).unwrap();
    let back = VqModel::load(small(), &path).unwrap();
    assert_eq!(back, model);

    let recs: Vec<TokenRecord> = imgs
        .iter()
        .enumerate()
        .map(|(i, im)| TokenRecord {
            image_id: format!("img{i}"),
            indices: model.image_to_tokens(im).unwrap(),
        })
        .collect();
    let mut buf = Vec::new();
    write_token_dump(&recs, &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("{\"image_id\":\"img0\",\"indices\":["));
    assert_eq!(read_token_dump(buf.as_slice()).unwrap(), recs);
}

#[test]
fn split_is_disjoint_and_covering() {
    let (tr, va) = split_indices(50, 0.1, 3);
    assert_eq!(va.len(), 5);
    let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
    all.sort();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
    assert_eq!(split_indices(1, 0.1, 0), (vec![0], vec![0]));
}
