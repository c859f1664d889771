//! Training data: clips paired with their core-codec output, cut into
//! fixed-length segments in a seeded order.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, AudioBuffer};
use crate::core_codec::CoreCodec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A clip and the core codec's rendition of it.
pub struct ClipPair {
    pub name: String,
    pub x: AudioBuffer,
    pub x_core: AudioBuffer,
}

pub struct Dataset {
    pub clips: Vec<ClipPair>,
    pub segment_len: usize,
    /// `(clip, offset)` of every segment.
    pub segments: Vec<(usize, usize)>,
    /// Files skipped at load time, with the reason.
    pub rejected: Vec<(PathBuf, String)>,
}

impl Dataset {
    /// Runs every clip through `core` and indexes segments on a half-segment
    /// grid. Clips shorter than a segment contribute nothing.
    pub fn new(clips: Vec<(String, AudioBuffer)>, core: &dyn CoreCodec, segment_len: usize) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::invalid("segment length must be positive"));
        }
        let stride = (segment_len / 2).max(1);
        let mut pairs = Vec::with_capacity(clips.len());
        let mut segments = Vec::new();
        for (name, x) in clips {
            let x_core = core.round_trip(&x)?;
            if x.len() >= segment_len {
                let idx = pairs.len();
                segments.extend((0..=(x.len() - segment_len) / stride).map(|k| (idx, k * stride)));
            }
            pairs.push(ClipPair { name, x, x_core });
        }
        if segments.is_empty() {
            return Err(Error::invalid(format!(
                "dataset holds no segment of {segment_len} samples"
            )));
        }
        Ok(Self {
            clips: pairs,
            segment_len,
            segments,
            rejected: Vec::new(),
        })
    }

    /// Loads every `.wav` under `dir` (non-recursive, sorted by name). Files
    /// at other sample rates or with more than one channel are skipped and
    /// listed in `rejected`.
    pub fn from_dir(dir: impl AsRef<Path>, sample_rate: u32, core: &dyn CoreCodec, segment_len: usize) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let mut clips = Vec::new();
        let mut rejected = Vec::new();
        for p in paths {
            match read_wav(&p).and_then(|a| a.require_rate(sample_rate).map(|_| a)) {
                Ok(a) => clips.push((p.display().to_string(), a)),
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.display());
                    rejected.push((p, e.to_string()));
                }
            }
        }
        if clips.is_empty() {
            return Err(Error::invalid(format!("no usable wav files in {}", dir.as_ref().display())));
        }
        let mut ds = Self::new(clips, core, segment_len)?;
        ds.rejected = rejected;
        Ok(ds)
    }

    pub fn duration_secs(&self) -> f64 {
        self.clips.iter().map(|c| c.x.duration_secs()).sum()
    }

    /// Segment order for `epoch`, fixed by `seed`.
    pub fn order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.segments.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        idx.shuffle(&mut rng);
        idx
    }

    /// `(x, x_core)` batches `[B, segment_len]` for the given segments.
    pub fn batch(&self, ids: &[usize]) -> (Tensor, Tensor) {
        let n = self.segment_len;
        let mut x = Vec::with_capacity(ids.len() * n);
        let mut c = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            let (clip, off) = self.segments[i];
            let pair = &self.clips[clip];
            x.extend_from_slice(&pair.x.samples()[off..off + n]);
            c.extend_from_slice(&pair.x_core.samples()[off..off + n]);
        }
        (
            Tensor::from_vec(x, &[ids.len(), n]),
            Tensor::from_vec(c, &[ids.len(), n]),
        )
    }
}

/// Endless batches of segment ids, reshuffled every epoch.
pub struct BatchSampler {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(ds: &Dataset, seed: u64) -> Self {
        Self {
            seed,
            epoch: 0,
            order: ds.order(seed, 0),
            pos: 0,
        }
    }

    pub fn next_batch(&mut self, ds: &Dataset, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.order = ds.order(self.seed, self.epoch);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
