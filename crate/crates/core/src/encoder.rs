//! Side-information feature encoder: a causal ResNet-style 2D stack over the
//! log-power slab of the generated frequency range, conditioned on the
//! decoder's bottleneck embedding `h`.

use crate::config::SbgConfig;
use crate::dsp::stft::{log_power, Spectrogram, StftPlan, LOG_POWER_EPS};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, Tfilm};
use crate::tensor::conv::{max_pool2d, Conv2dSpec};
use crate::tensor::params::Scope;
use crate::tensor::Tensor;

/// Rows of `spec` covering PQMF bands `n_core .. n_core + n_hf`.
pub fn select_hf_bins(spec: &Spectrogram, cfg: &SbgConfig) -> Result<Spectrogram> {
    if cfg.n_hf == 0 {
        return Err(Error::invalid("empty generation range"));
    }
    let per_band = cfg.bins_per_band();
    let (start, end) = (cfg.n_core * per_band, (cfg.n_core + cfg.n_hf) * per_band);
    if end > spec.bins.saturating_sub(1) {
        return Err(Error::invalid(format!(
            "generation range ends at bin {end}, beyond the {} available",
            spec.bins
        )));
    }
    Ok(spec.bin_range(start, end))
}

/// Log-power slabs `[B, 1, F', T]` for a batch of signals `[B, L]`.
pub fn slab_batch(x: &Tensor, cfg: &SbgConfig) -> Result<Tensor> {
    let (batch, len) = (x.dim(0), x.dim(1));
    let plan = StftPlan::get(cfg.window)?;
    let frames = StftPlan::frames(len, cfg.hop);
    let f = cfg.slab_bins();
    let mut out = Vec::with_capacity(batch * f * frames);
    let xv = x.data();
    for b in 0..batch {
        let (re, im) = plan.forward(&xv[b * len..(b + 1) * len], cfg.hop);
        let spec = crate::dsp::stft::ComplexSpectrogram {
            re,
            im,
            bins: plan.bins(),
            frames,
            hop: cfg.hop,
            bin_hz: cfg.sample_rate as f64 / cfg.window as f64,
        };
        out.extend(select_hf_bins(&log_power(&spec, LOG_POWER_EPS)?, cfg)?.values);
    }
    Ok(Tensor::from_vec(out, &[batch, 1, f, frames]))
}

/// Two 3×3 convolutions with ReLU and an additive (projected when needed)
/// shortcut.
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl BasicBlock {
    fn new(scope: &mut Scope<'_>, name: &str, (cin, cout): (usize, usize), stride_f: usize) -> Self {
        let mut s = scope.child(name);
        let conv1 = Conv2d::new(&mut s, "conv1", (cin, cout), (3, 3), (stride_f, 1), 1.0);
        let conv2 = Conv2d::new(&mut s, "conv2", (cout, cout), (3, 3), (1, 1), RESIDUAL_GAIN);
        let shortcut = (cin != cout || stride_f != 1)
            .then(|| Conv2d::new(&mut s, "shortcut", (cin, cout), (1, 1), (stride_f, 1), 1.0));
        Self { conv1, conv2, shortcut }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu())?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok(y.add(&skip).relu())
    }
}

/// Gain on the last convolution of each residual branch, keeping the
/// un-normalized residual stacks near unit scale at initialization.
pub(crate) const RESIDUAL_GAIN: f64 = 0.3;

struct Stage {
    blocks: [BasicBlock; 2],
    film: Tfilm,
}

pub struct FeatureEncoder {
    stem: Conv2d,
    stages: Vec<Stage>,
    proj: Linear,
    d: usize,
    s_f: usize,
    h_channels: usize,
}

impl FeatureEncoder {
    pub fn new(scope: &mut Scope<'_>, cfg: &SbgConfig) -> Self {
        let d = cfg.d;
        let h_channels = 4 * cfg.c;
        let ratio = cfg.hop / cfg.embedding_hop();
        let stem = Conv2d::new(scope, "stem", (1, d / 8), (7, 7), (2, 1), 1.0);
        let widths = [d / 8, d / 4, d / 2, d];
        let mut cin = d / 8;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut s = scope.child(&format!("stage{i}"));
                let stride = if i == 0 { 1 } else { 2 };
                let blocks = [
                    BasicBlock::new(&mut s, "block0", (cin, w), stride),
                    BasicBlock::new(&mut s, "block1", (w, w), 1),
                ];
                cin = w;
                let film = Tfilm::new(&mut s, "film", (w, h_channels), (ratio > 1).then_some(ratio));
                Stage { blocks, film }
            })
            .collect();
        let proj = Linear::new(scope, "proj", (d, cfg.s_f), true);
        Self {
            stem,
            stages,
            proj,
            d,
            s_f: cfg.s_f,
            h_channels,
        }
    }

    /// `[B, 1, F', T]` slab and `[B, 4C, T_h]` embedding → `[B, D, F'/32, T]`.
    pub fn forward(&self, slab: &Tensor, h: &Tensor) -> Result<Tensor> {
        if slab.rank() != 4 || slab.dim(1) != 1 {
            return Err(Error::shape(format!("encoder expects [B, 1, F', T], got {:?}", slab.shape())));
        }
        if slab.dim(2) % self.s_f != 0 {
            return Err(Error::shape(format!(
                "slab height {} not divisible by {}",
                slab.dim(2),
                self.s_f
            )));
        }
        if h.rank() != 3 || h.dim(1) != self.h_channels || h.dim(0) != slab.dim(0) {
            return Err(Error::shape(format!(
                "embedding h has shape {:?}, expected [{}, {}, T_h]",
                h.shape(),
                slab.dim(0),
                self.h_channels
            )));
        }
        let x = self.stem.forward(slab)?.relu();
        let mut x = max_pool2d(&x, (3, 3), Conv2dSpec::same_f_causal_t(3, 3, 2, 1));
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(&x)?;
            }
            x = stage.film.forward(&x, h)?;
        }
        debug_assert_eq!(x.dim(1), self.d);
        Ok(x)
    }

    /// `[B, D, F'/32, T]` → `[B, F', T]`: pointwise projection to `S_f`
    /// channels, then channel index `s` of frequency chunk `f` lands on row
    /// `f * S_f + s`.
    pub fn project_reshape(&self, z: &Tensor) -> Tensor {
        let p = self.proj.forward(z);
        merge_chunks(&p)
    }

    pub fn films(&self) -> impl Iterator<Item = &Tfilm> {
        self.stages.iter().map(|s| &s.film)
    }
}

/// `[B, S, Fc, T]` → `[B, Fc * S, T]`, row `f * S + s`.
pub fn merge_chunks(p: &Tensor) -> Tensor {
    let (b, s, fc, t) = (p.dim(0), p.dim(1), p.dim(2), p.dim(3));
    p.permute(&[0, 2, 1, 3]).reshape(&[b, fc * s, t])
}

/// Inverse of [`merge_chunks`].
pub fn split_chunks(z: &Tensor, s: usize) -> Tensor {
    let (b, f, t) = (z.dim(0), z.dim(1), z.dim(2));
    z.reshape(&[b, f / s, s, t]).permute(&[0, 2, 1, 3])
}
