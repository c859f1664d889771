//! Model, loss, discriminator and core-codec configuration, loadable from
//! TOML.

use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbgConfig {
    pub sample_rate: u32,
    /// Encoder STFT hop `H`; also the side-information frame length.
    pub hop: usize,
    pub window: usize,
    /// Feature-encoder width `D`.
    pub d: usize,
    /// Total frequency reduction `S_f` of the feature encoder.
    pub s_f: usize,
    /// Decoder base channels `C`.
    pub c: usize,
    pub n_core: usize,
    pub n_hf: usize,
    pub n_q: usize,
    /// Codes per codebook `M`.
    pub codebook_size: usize,
    /// Codebook dimension `N`.
    pub codebook_dim: usize,
    pub strides: Vec<usize>,
    pub pqmf_bands: usize,
    pub pqmf_taps_per_band: usize,
    pub pqmf_stopband_db: f64,
    pub loss: LossWeights,
    pub disc: DiscConfig,
    pub core: CoreConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mel: f64,
    pub adv: f64,
    pub fm: f64,
    pub cb: f64,
    pub cm: f64,
    pub adv_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 15.0,
            adv: 3.0,
            fm: 6.0,
            cb: 1.0,
            cm: 0.5,
            adv_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub stft_windows: Vec<usize>,
    pub periods: Vec<usize>,
    /// Channel width of the first discriminator layer.
    pub channels: usize,
    pub max_channels: usize,
    /// Discriminators see this many samples from the start of each segment.
    pub crop: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            stft_windows: vec![2048, 1024, 512],
            periods: vec![2, 3, 5, 7, 11],
            channels: 32,
            max_channels: 256,
            crop: 16_384,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreKind {
    Surrogate,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreConfig {
    pub kind: CoreKind,
    pub keep_bands: usize,
    pub quant_bits: u32,
    /// Subprocess command lines with `{input}` / `{output}` placeholders.
    pub encode_cmd: String,
    pub decode_cmd: String,
    /// Samples to drop from the start of the external core's output.
    pub delay: usize,
    pub bandwidth_hz: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            kind: CoreKind::Surrogate,
            keep_bands: 5,
            quant_bits: 8,
            encode_cmd: String::new(),
            decode_cmd: String::new(),
            delay: 0,
            bandwidth_hz: 3750.0,
        }
    }
}

impl Default for SbgConfig {
    fn default() -> Self {
        Self::full_12kbps()
    }
}

impl SbgConfig {
    /// Full-size model, bands (5, 10), 11 quantizer stages.
    pub fn full_12kbps() -> Self {
        Self {
            sample_rate: 48_000,
            hop: 2048,
            window: 2048,
            d: 512,
            s_f: 32,
            c: 64,
            n_core: 5,
            n_hf: 10,
            n_q: 11,
            codebook_size: 1024,
            codebook_dim: 8,
            strides: vec![1, 2, 2, 2],
            pqmf_bands: 32,
            pqmf_taps_per_band: 8,
            pqmf_stopband_db: 80.0,
            loss: LossWeights::default(),
            disc: DiscConfig::default(),
            core: CoreConfig::default(),
        }
    }

    /// Full-size model, bands (5, 11), 13 quantizer stages.
    pub fn full_16kbps() -> Self {
        Self {
            n_hf: 11,
            n_q: 13,
            ..Self::full_12kbps()
        }
    }

    /// Reduced widths that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            d: 32,
            c: 8,
            disc: DiscConfig {
                channels: 4,
                max_channels: 16,
                crop: 8192,
                ..DiscConfig::default()
            },
            ..Self::full_12kbps()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full_12kbps" => Ok(Self::full_12kbps()),
            "full_16kbps" => Ok(Self::full_16kbps()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Spectrogram bins per PQMF band (`window / (2 * bands)`).
    pub fn bins_per_band(&self) -> usize {
        self.window / (2 * self.pqmf_bands)
    }

    /// Height `F'` of the selected spectrogram slab.
    pub fn slab_bins(&self) -> usize {
        self.n_hf * self.bins_per_band()
    }

    /// Temporal reduction of the embedding extractor relative to audio.
    pub fn embedding_hop(&self) -> usize {
        self.pqmf_bands * self.strides.iter().product::<usize>()
    }

    /// Audio lengths are padded to a multiple of this.
    pub fn block_len(&self) -> usize {
        self.hop
    }

    pub fn bits_per_code(&self) -> u32 {
        self.codebook_size.trailing_zeros()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.window == 0 || self.hop == 0 || self.window < self.hop {
            return fail(format!("window {} must be >= hop {} > 0", self.window, self.hop));
        }
        if self.pqmf_bands < 2 || self.window % (2 * self.pqmf_bands) != 0 {
            return fail(format!(
                "window {} must split evenly into {} bands",
                self.window, self.pqmf_bands
            ));
        }
        if self.n_hf == 0 {
            return fail("n_hf must be at least 1 (empty generation range)".into());
        }
        if self.n_core == 0 || self.n_core + self.n_hf > self.pqmf_bands {
            return fail(format!(
                "band split ({}, {}) exceeds {} bands",
                self.n_core, self.n_hf, self.pqmf_bands
            ));
        }
        if self.s_f != 32 || self.slab_bins() % self.s_f != 0 {
            return fail(format!("slab height {} must be a multiple of s_f = 32", self.slab_bins()));
        }
        if self.d < 8 || self.d % 8 != 0 {
            return fail(format!("d = {} must be a positive multiple of 8", self.d));
        }
        if self.c == 0 {
            return fail("c must be positive".into());
        }
        if self.strides.len() != 4 || self.strides.iter().any(|&s| s == 0) {
            return fail(format!("strides {:?} must be four positive factors", self.strides));
        }
        let hop_h = self.embedding_hop();
        if self.hop % hop_h != 0 {
            return fail(format!("hop {} must be a multiple of the embedding hop {hop_h}", self.hop));
        }
        if !self.codebook_size.is_power_of_two() || self.codebook_size < 2 || self.codebook_size > 1 << 16 {
            return fail(format!("codebook_size {} must be a power of two in 2..=65536", self.codebook_size));
        }
        if self.codebook_dim == 0 || self.codebook_dim >= self.slab_bins() {
            return fail(format!(
                "codebook_dim {} must be in 1..{}",
                self.codebook_dim,
                self.slab_bins()
            ));
        }
        if self.n_q > 255 || self.n_core > 255 || self.n_hf > 255 || self.hop > u16::MAX as usize {
            return fail("header fields out of range".into());
        }
        if self.core.keep_bands == 0 || self.core.keep_bands > self.pqmf_bands {
            return fail(format!("core keep_bands {} out of range", self.core.keep_bands));
        }
        let w = &self.loss;
        if [w.mel, w.adv, w.fm, w.cb, w.cm, w.adv_d].iter().any(|&v| !(v >= 0.0)) {
            return fail("loss weights must be non-negative".into());
        }
        if self.disc.stft_windows.iter().any(|&wl| wl == 0 || wl % 8 != 0 || wl > self.disc.crop) {
            return fail("discriminator windows must be multiples of 8 not exceeding the crop".into());
        }
        if self.disc.periods.iter().any(|&p| p < 2) || self.disc.channels == 0 {
            return fail("discriminator periods must be >= 2 and channels positive".into());
        }
        Ok(())
    }
}

/// Side-information rate `f_s / H * N_q * ceil(log2 M)` in bits per second,
/// as an exact rational.
pub fn side_info_bitrate(sample_rate: u32, hop: usize, n_q: usize, codebook_size: usize) -> Result<Ratio<u64>> {
    if hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    if codebook_size < 1 {
        return Err(Error::invalid("codebook must hold at least one code"));
    }
    let bits = (codebook_size as u64).next_power_of_two().trailing_zeros() as u64;
    Ok(Ratio::new(sample_rate as u64 * n_q as u64 * bits, hop as u64))
}
