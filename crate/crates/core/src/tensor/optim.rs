//! Adam with exponential learning-rate decay and global-norm clipping.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by this after every step.
    pub decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            decay: 0.999996,
            clip_norm: Some(10.0),
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            cfg,
            params,
            m,
            v,
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate the next step will use.
    pub fn learning_rate(&self) -> f64 {
        self.cfg.lr * self.cfg.decay.powf(self.steps as f64)
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    /// Updates parameters from their accumulated gradients (missing
    /// gradients count as zero). Returns the pre-clip global gradient norm.
    pub fn step(&mut self) -> Result<f64> {
        let grads: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        self.step_with(grads)
    }

    /// Updates parameters from explicit gradients, one per parameter.
    pub fn step_with(&mut self, mut grads: Vec<Vec<f64>>) -> Result<f64> {
        if grads.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(&self.params).enumerate() {
            if g.len() != p.numel() {
                return Err(Error::shape(format!(
                    "gradient {i} has {} values, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
        }
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        if let Some(clip) = self.cfg.clip_norm {
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        let lr = self.learning_rate();
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in self.params.iter().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            let mut data = p.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(norm)
    }
}
