//! Finite-difference checks for every layer, both losses and the full u-net.

mod common;

use common::*;
use rand::Rng;
use remforge::nn::layers::*;
use remforge::nn::loss::{gaussian_nll_loss, mse_loss};
use remforge::nn::tensor::{concat_channels, split_channels};
use remforge::nn::{Tensor, UNetConfig, UNetParams};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn shape3(r: &mut rand_chacha::ChaCha8Rng, even: bool) -> (usize, usize, usize) {
    let c = r.random_range(1..4);
    let mut h = r.random_range(2..7);
    let mut w = r.random_range(2..7);
    if even {
        h += h % 2;
        w += w % 2;
    }
    (c, h, w)
}

#[test]
fn conv2d_gradients() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (c, h, w) = shape3(&mut r, false);
        let o = r.random_range(1..4);
        let k = if seed % 4 == 3 { 1 } else { 3 };
        let mut x = random_tensor(&mut r, &[c, h, w]);
        let mut wt = random_tensor(&mut r, &[o, c, k, k]);
        let mut b = random_tensor(&mut r, &[o]);
        let proj = random_tensor(&mut r, &[o, h, w]);

        let (_, cache) = conv2d(&x, &wt, &b).unwrap();
        let (dx, dw, db) = conv2d_backward(&cache, &wt, &proj).unwrap();

        let (w0, b0) = (wt.clone(), b.clone());
        let nx = numeric_grad(&mut x, H, |x| dot(&conv2d(x, &w0, &b0).unwrap().0, &proj));
        let x0 = x.clone();
        let nw = numeric_grad(&mut wt, H, |wt| dot(&conv2d(&x0, wt, &b0).unwrap().0, &proj));
        let nb = numeric_grad(&mut b, H, |b| dot(&conv2d(&x0, &w0, b).unwrap().0, &proj));
        assert!(relative_error(dx.data(), &nx) < TOL, "seed {seed} dx");
        assert!(relative_error(dw.data(), &nw) < TOL, "seed {seed} dw");
        assert!(relative_error(db.data(), &nb) < TOL, "seed {seed} db");
    }
}

#[test]
fn tconv2_gradients() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let (c, h, w) = shape3(&mut r, false);
        let o = r.random_range(1..4);
        let mut x = random_tensor(&mut r, &[c, h, w]);
        let mut wt = random_tensor(&mut r, &[c, o, 2, 2]);
        let mut b = random_tensor(&mut r, &[o]);
        let proj = random_tensor(&mut r, &[o, 2 * h, 2 * w]);
        let (dx, dw, db) = tconv2_backward(&x, &wt, &proj).unwrap();
        let (w0, b0) = (wt.clone(), b.clone());
        let nx = numeric_grad(&mut x, H, |x| dot(&tconv2(x, &w0, &b0).unwrap(), &proj));
        let x0 = x.clone();
        let nw = numeric_grad(&mut wt, H, |wt| dot(&tconv2(&x0, wt, &b0).unwrap(), &proj));
        let nb = numeric_grad(&mut b, H, |b| dot(&tconv2(&x0, &w0, b).unwrap(), &proj));
        assert!(relative_error(dx.data(), &nx) < TOL, "seed {seed}");
        assert!(relative_error(dw.data(), &nw) < TOL, "seed {seed}");
        assert!(relative_error(db.data(), &nb) < TOL, "seed {seed}");
    }
}

#[test]
fn maxpool_and_relu_gradients() {
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let (c, h, w) = shape3(&mut r, true);
        // distinct, well separated values keep the argmax and the relu kink
        // out of reach of the finite-difference step
        let n = c * h * w;
        let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.01).collect();
        for i in (1..n).rev() {
            let j = r.random_range(0..=i);
            vals.swap(i, j);
        }
        let mut x = Tensor::from_vec(&[c, h, w], vals).unwrap();
        let proj = random_tensor(&mut r, &[c, h / 2, w / 2]);
        let (_, idx) = maxpool2(&x).unwrap();
        let dx = maxpool2_backward(&proj, &idx, x.shape()).unwrap();
        let nx = numeric_grad(&mut x, H, |x| dot(&maxpool2(x).unwrap().0, &proj));
        assert!(relative_error(dx.data(), &nx) < TOL, "maxpool seed {seed}");

        let proj = random_tensor(&mut r, &[c, h, w]);
        let out = relu(&x);
        let dx = relu_backward(&out, &proj);
        let nx = numeric_grad(&mut x, H, |x| dot(&relu(x), &proj));
        assert!(relative_error(dx.data(), &nx) < TOL, "relu seed {seed}");
    }
}

#[test]
fn concat_split_are_adjoint() {
    let mut r = rng(300);
    let a = random_tensor(&mut r, &[2, 3, 4]);
    let b = random_tensor(&mut r, &[3, 3, 4]);
    let cat = concat_channels(&a, &b).unwrap();
    assert_eq!(cat.shape(), &[5, 3, 4]);
    let (a2, b2) = split_channels(&cat, 2).unwrap();
    assert_eq!((a2, b2), (a, b));
    assert!(concat_channels(&Tensor::zeros(&[1, 2, 2]), &Tensor::zeros(&[1, 3, 2])).is_err());
}

#[test]
fn loss_gradients() {
    for seed in 0..20 {
        let mut r = rng(400 + seed);
        let n = r.random_range(1..40);
        let mut pred = random_tensor(&mut r, &[n]);
        let target = random_tensor(&mut r, &[n]);
        let mut log_var = random_tensor(&mut r, &[n]);
        let mask: Vec<bool> = (0..n).map(|i| i == 0 || r.random_bool(0.6)).collect();
        let mask_opt = if seed % 2 == 0 { Some(&mask[..]) } else { None };

        let (_, g) = mse_loss(pred.data(), target.data(), mask_opt).unwrap();
        let ng = numeric_grad(&mut pred, H, |p| mse_loss(p.data(), target.data(), mask_opt).unwrap().0);
        assert!(relative_error(&g, &ng) < TOL, "mse seed {seed}");

        let (_, dm, ds) = gaussian_nll_loss(pred.data(), log_var.data(), target.data(), mask_opt).unwrap();
        let lv = log_var.clone();
        let nm =
            numeric_grad(&mut pred, H, |p| gaussian_nll_loss(p.data(), lv.data(), target.data(), mask_opt).unwrap().0);
        let p0 = pred.clone();
        let ns = numeric_grad(&mut log_var, H, |s| {
            gaussian_nll_loss(p0.data(), s.data(), target.data(), mask_opt).unwrap().0
        });
        assert!(relative_error(&dm, &nm) < TOL, "nll mean seed {seed}");
        assert!(relative_error(&ds, &ns) < TOL, "nll log-var seed {seed}");
    }
}

fn unet_gradcheck(cfg: UNetConfig, side: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let params = UNetParams::init(cfg, seed).unwrap();
    let input = random_tensor(&mut r, &[cfg.in_channels, side, side]);
    let proj = random_tensor(&mut r, &[1, side, side]);
    let (_, tape) = params.forward_train(&input).unwrap();
    let mut grads = params.zero_grads();
    let dinput = params.backward(&tape, &proj, &mut grads).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = params.clone();
    for i in 0..probe.tensors.len() {
        for j in 0..probe.tensors[i].len() {
            let orig = probe.tensors[i].data()[j];
            probe.tensors[i].data_mut()[j] = orig + H;
            let plus = dot(&probe.forward(&input).unwrap(), &proj);
            probe.tensors[i].data_mut()[j] = orig - H;
            let minus = dot(&probe.forward(&input).unwrap(), &proj);
            probe.tensors[i].data_mut()[j] = orig;
            analytic.push(grads[i].data()[j]);
            numeric.push((plus - minus) / (2.0 * H));
        }
    }
    let mut x = input.clone();
    let nx = numeric_grad(&mut x, H, |x| dot(&params.forward(x).unwrap(), &proj));
    (relative_error(&analytic, &numeric), relative_error(dinput.data(), &nx))
}

#[test]
fn unet_end_to_end_gradients() {
    let (ep, ex) = unet_gradcheck(UNetConfig { in_channels: 3, depth: 1, base_channels: 4 }, 8, 11);
    assert!(ep < TOL && ex < TOL, "params {ep:e}, input {ex:e}");
    let (ep, ex) = unet_gradcheck(UNetConfig { in_channels: 2, depth: 2, base_channels: 2 }, 8, 12);
    assert!(ep < TOL && ex < TOL, "params {ep:e}, input {ex:e}");
}
