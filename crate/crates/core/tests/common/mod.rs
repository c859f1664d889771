//! Shared helpers for the integration suites.
#![allow(dead_code)]

use nsbg::tensor::{no_grad, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Coordinates probed per tensor; larger tensors are sampled.
const FD_MAX_COORDS: usize = 48;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn param(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor {
    Tensor::param(normal_vec(rng, shape.iter().product(), sd), shape)
}

pub fn constant(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor {
    Tensor::from_vec(normal_vec(rng, shape.iter().product(), sd), shape)
}

/// `sum(out * weights)` with fixed random weights, so every output element
/// contributes to the checked scalar.
pub fn project(out: &Tensor, weights: &[f64]) -> Tensor {
    assert_eq!(out.numel(), weights.len());
    out.mul(&Tensor::from_vec(weights.to_vec(), out.shape())).sum()
}

/// Largest normwise relative error `|g - g_fd| / max(|g|, |g_fd|)` over
/// `params`, comparing backprop against central differences of `f`.
pub fn grad_error(params: &[Tensor], f: &dyn Fn() -> Tensor, seed: u64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    f().backward().expect("backward");
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for p in params {
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let coords: Vec<usize> = if p.numel() <= FD_MAX_COORDS {
            (0..p.numel()).collect()
        } else {
            (0..FD_MAX_COORDS).map(|_| rng.gen_range(0..p.numel())).collect()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let orig = p.data()[i];
            let eval = |v: f64| {
                p.data_mut()[i] = v;
                let _g = no_grad();
                f().item()
            };
            let hi = eval(orig + FD_STEP);
            let lo = eval(orig - FD_STEP);
            p.data_mut()[i] = orig;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            diff += (grad[i] - fd).powi(2);
            na += grad[i] * grad[i];
            nn += fd * fd;
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

pub fn noise(len: usize, sd: f64, seed: u64) -> Vec<f64> {
    normal_vec(&mut rng(seed), len, sd)
}
