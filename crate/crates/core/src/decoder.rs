//! Subband decoder: an embedding extractor over the coded core subbands and
//! a band generator producing the high-frequency subbands, both built from
//! causal residual blocks.

use std::sync::Arc;

use crate::config::SbgConfig;
use crate::dsp::pqmf::{PqmfBank, SubbandFrameSet};
use crate::encoder::RESIDUAL_GAIN;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvTranspose1d, Tfilm, LEAKY_SLOPE};
use crate::tensor::params::Scope;
use crate::tensor::signal::pqmf_synthesize;
use crate::tensor::Tensor;

/// Gain on the final generator convolution; keeps initial outputs small
/// relative to typical subband amplitudes.
pub(crate) const OUTPUT_GAIN: f64 = 0.1;

const DILATIONS: [usize; 3] = [1, 3, 9];

fn act(x: &Tensor) -> Tensor {
    x.leaky_relu(LEAKY_SLOPE)
}

/// `x + conv1x1(act(conv3_dil(act(x))))`.
struct ResUnit {
    dilated: Conv1d,
    pointwise: Conv1d,
}

impl ResUnit {
    fn new(scope: &mut Scope<'_>, name: &str, channels: usize, dilation: usize) -> Self {
        let mut s = scope.child(name);
        Self {
            dilated: Conv1d::causal(&mut s, "dilated", (channels, channels, 3), 1, dilation, 1.0),
            pointwise: Conv1d::causal(&mut s, "pointwise", (channels, channels, 1), 1, 1, RESIDUAL_GAIN),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let y = self.pointwise.forward(&act(&self.dilated.forward(&act(x))));
        x.add(&y)
    }
}

fn res_units(scope: &mut Scope<'_>, channels: usize) -> Vec<ResUnit> {
    DILATIONS
        .iter()
        .enumerate()
        .map(|(i, &d)| ResUnit::new(scope, &format!("res{i}"), channels, d))
        .collect()
}

struct EncoderBlock {
    units: Vec<ResUnit>,
    down: Conv1d,
}

impl EncoderBlock {
    /// Returns `(downsampled, skip)`, where the skip is the activation
    /// entering the downsampling convolution.
    fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut y = x.clone();
        for u in &self.units {
            y = u.forward(&y);
        }
        let out = self.down.forward(&act(&y));
        (out, y)
    }
}

/// Core subbands `[B, N_core, T'/32]` → embedding `h` `[B, 4C, T'/256]`.
pub struct EmbeddingExtractor {
    input: Conv1d,
    blocks: Vec<EncoderBlock>,
    bottleneck: Conv1d,
    n_core: usize,
}

/// Output of the embedding extractor.
pub struct Embedding {
    pub h: Tensor,
    /// Pre-downsampling activations, shallowest first.
    pub skips: Vec<Tensor>,
}

impl EmbeddingExtractor {
    pub fn new(scope: &mut Scope<'_>, cfg: &SbgConfig) -> Self {
        let c = cfg.c;
        let input = Conv1d::causal(scope, "input", (cfg.n_core, c, 7), 1, 1, 1.0);
        let blocks = cfg
            .strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let ch = c << i;
                let mut sc = scope.child(&format!("block{i}"));
                let units = res_units(&mut sc, ch);
                let down = Conv1d::causal(&mut sc, "down", (ch, 2 * ch, 2 * s), s, 1, 1.0);
                EncoderBlock { units, down }
            })
            .collect();
        let bottleneck = Conv1d::causal(scope, "bottleneck", (16 * c, 4 * c, 3), 1, 1, 1.0);
        Self {
            input,
            blocks,
            bottleneck,
            n_core: cfg.n_core,
        }
    }

    pub fn forward(&self, core: &Tensor) -> Result<Embedding> {
        if core.rank() != 3 || core.dim(1) != self.n_core {
            return Err(Error::shape(format!(
                "embedding extractor expects [B, {}, T], got {:?}",
                self.n_core,
                core.shape()
            )));
        }
        let mut x = self.input.forward(core);
        let mut skips = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, skip) = b.forward(&x);
            skips.push(skip);
            x = y;
        }
        let h = self.bottleneck.forward(&act(&x));
        Ok(Embedding { h, skips })
    }
}

struct DecoderBlock {
    up: ConvTranspose1d,
    units: Vec<ResUnit>,
    film: Tfilm,
}

/// Embedding, skips and `ẑ` → generated subbands `[B, N_HF, T'/32]`.
pub struct BandGenerator {
    bottleneck: Conv1d,
    film: Tfilm,
    /// Deepest first, mirroring the extractor blocks in reverse.
    blocks: Vec<DecoderBlock>,
    output: Conv1d,
    c: usize,
    z_dim: usize,
}

impl BandGenerator {
    pub fn new(scope: &mut Scope<'_>, cfg: &SbgConfig) -> Self {
        let c = cfg.c;
        let z_dim = cfg.slab_bins();
        let bottleneck = Conv1d::causal(scope, "bottleneck", (4 * c, 16 * c, 3), 1, 1, 1.0);
        let film = Tfilm::new(scope, "film", (16 * c, z_dim), None);
        let blocks = (0..cfg.strides.len())
            .rev()
            .map(|i| {
                let ch = c << i;
                let mut sc = scope.child(&format!("block{i}"));
                let up = ConvTranspose1d::new(&mut sc, "up", (2 * ch, ch), cfg.strides[i]);
                let units = res_units(&mut sc, ch);
                let film = Tfilm::new(&mut sc, "film", (ch, z_dim), None);
                DecoderBlock { up, units, film }
            })
            .collect();
        let output = Conv1d::causal(scope, "output", (c, cfg.n_hf, 7), 1, 1, OUTPUT_GAIN);
        Self {
            bottleneck,
            film,
            blocks,
            output,
            c,
            z_dim,
        }
    }

    /// `skips`, when given, are added at the matching decoder blocks; `None`
    /// runs the generator without skip connections.
    pub fn forward(&self, h: &Tensor, skips: Option<&[Tensor]>, z_hat: &Tensor) -> Result<Tensor> {
        if h.rank() != 3 || h.dim(1) != 4 * self.c {
            return Err(Error::shape(format!(
                "band generator expects h as [B, {}, T], got {:?}",
                4 * self.c,
                h.shape()
            )));
        }
        if z_hat.rank() != 3 || z_hat.dim(1) != self.z_dim || z_hat.dim(0) != h.dim(0) {
            return Err(Error::shape(format!(
                "z_hat has shape {:?}, expected [{}, {}, T]",
                z_hat.shape(),
                h.dim(0),
                self.z_dim
            )));
        }
        if let Some(s) = skips {
            if s.len() != self.blocks.len() {
                return Err(Error::shape(format!("{} skips for {} blocks", s.len(), self.blocks.len())));
            }
        }
        let x = self.bottleneck.forward(&act(h));
        let mut x = self.film.forward(&x, z_hat)?;
        for (j, blk) in self.blocks.iter().enumerate() {
            let mut y = blk.up.forward(&act(&x));
            for u in &blk.units {
                y = u.forward(&y);
            }
            if let Some(s) = skips {
                let skip = &s[self.blocks.len() - 1 - j];
                if skip.shape() != y.shape() {
                    return Err(Error::shape(format!(
                        "skip {:?} does not match decoder activation {:?}",
                        skip.shape(),
                        y.shape()
                    )));
                }
                y = y.add(skip);
            }
            x = blk.film.forward(&y, z_hat)?;
        }
        Ok(self.output.forward(&act(&x)))
    }

    /// Every conditioning layer on `ẑ`.
    pub fn films(&self) -> impl Iterator<Item = &Tfilm> {
        std::iter::once(&self.film).chain(self.blocks.iter().map(|b| &b.film))
    }
}

/// Stacks core bands, generated bands and zeros above them, then applies
/// PQMF synthesis: `[B, N_core, Ls]` + `[B, N_HF, Ls]` → `[B, K * Ls]`.
pub fn assemble_fullband_tensor(core: &Tensor, generated: &Tensor, bank: Arc<PqmfBank>) -> Result<Tensor> {
    let k = bank.num_bands();
    if core.rank() != 3 || generated.rank() != 3 {
        return Err(Error::shape("band tensors must be [B, K, Ls]"));
    }
    if core.dim(0) != generated.dim(0) || core.dim(2) != generated.dim(2) {
        return Err(Error::shape(format!(
            "core bands {:?} and generated bands {:?} differ in batch or length",
            core.shape(),
            generated.shape()
        )));
    }
    let used = core.dim(1) + generated.dim(1);
    if used > k {
        return Err(Error::shape(format!("{used} bands exceed the {k}-band bank")));
    }
    let mut parts = vec![core.clone(), generated.clone()];
    if used < k {
        parts.push(Tensor::zeros(&[core.dim(0), k - used, core.dim(2)]));
    }
    Ok(pqmf_synthesize(&Tensor::concat(&parts, 1), bank))
}

/// Subband-set form of [`assemble_fullband_tensor`]; the result is trimmed to
/// the core set's original length.
pub fn assemble_fullband(
    core: &SubbandFrameSet,
    generated: &SubbandFrameSet,
    bank: &PqmfBank,
) -> Result<crate::audio::AudioBuffer> {
    if core.len != generated.len {
        return Err(Error::shape(format!(
            "core bands have {} samples, generated bands {}",
            core.len, generated.len
        )));
    }
    let k = bank.num_bands();
    let used = core.num_bands + generated.num_bands;
    if used > k {
        return Err(Error::shape(format!("{used} bands exceed the {k}-band bank")));
    }
    let mut bands = Vec::with_capacity(k * core.len);
    bands.extend_from_slice(&core.bands);
    bands.extend_from_slice(&generated.bands);
    bands.resize(k * core.len, 0.0);
    let full = bank.synthesize_raw(&bands, core.len);
    crate::audio::AudioBuffer::new(full, core.sample_rate).map(|a| a.truncated(core.original_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{no_grad, params::ParamStore};

    fn build(cfg: &SbgConfig) -> (ParamStore, EmbeddingExtractor, BandGenerator) {
        let mut store = ParamStore::new(1);
        let ex = EmbeddingExtractor::new(&mut store.scope("decoder.extractor"), cfg);
        let gen = BandGenerator::new(&mut store.scope("decoder.generator"), cfg);
        (store, ex, gen)
    }

    #[test]
    fn desk_shapes() {
        let cfg = SbgConfig::desk();
        let (_s, ex, gen) = build(&cfg);
        let _g = no_grad();
        let core = Tensor::zeros(&[1, 5, 128]);
        let e = ex.forward(&core).unwrap();
        assert_eq!(e.h.shape(), [1, 32, 16]);
        let widths: Vec<usize> = e.skips.iter().map(|s| s.dim(1)).collect();
        assert_eq!(widths, [8, 16, 32, 64]);
        let z = Tensor::zeros(&[1, 320, 2]);
        let out = gen.forward(&e.h, Some(&e.skips), &z).unwrap();
        assert_eq!(out.shape(), [1, 10, 128]);
        assert!(ex.forward(&Tensor::zeros(&[1, 4, 128])).is_err());
        assert!(gen.forward(&e.h, Some(&e.skips), &Tensor::zeros(&[1, 320, 3])).is_err());
    }

    #[test]
    fn zeroed_films_ignore_side_information() {
        let cfg = SbgConfig::desk();
        let (_s, ex, gen) = build(&cfg);
        gen.films().for_each(|f| f.proj.zero());
        let _g = no_grad();
        let core = Tensor::from_vec((0..5 * 64).map(|i| (i as f64 * 0.37).sin()).collect(), &[1, 5, 64]);
        let e = ex.forward(&core).unwrap();
        let a = gen.forward(&e.h, Some(&e.skips), &Tensor::zeros(&[1, 320, 1])).unwrap();
        let b = gen.forward(&e.h, Some(&e.skips), &Tensor::full(&[1, 320, 1], 3.0)).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn assembling_silence_gives_silence() {
        let bank = Arc::new(crate::dsp::pqmf::default_bank());
        let y = assemble_fullband_tensor(&Tensor::zeros(&[1, 5, 8]), &Tensor::zeros(&[1, 10, 8]), bank.clone()).unwrap();
        assert_eq!(y.shape(), [1, 256]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(assemble_fullband_tensor(&Tensor::zeros(&[1, 20, 8]), &Tensor::zeros(&[1, 13, 8]), bank).is_err());
    }
}
