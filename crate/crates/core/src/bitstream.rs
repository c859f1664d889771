//! Side-information bitstream: a 20-byte little-endian header followed by
//! one byte-aligned record per frame holding that frame's code indices,
//! packed MSB-first.

use crate::config::SbgConfig;
use crate::error::{Error, Result};
use crate::rvq::CodeGrid;

pub const MAGIC: &[u8; 4] = b"NSBG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub sample_rate: u32,
    pub n_core: u8,
    pub n_hf: u8,
    /// Stages actually transmitted.
    pub n_q: u8,
    pub codebook_size: u16,
    pub hop: u16,
    pub num_frames: u32,
}

impl Header {
    pub fn for_config(cfg: &SbgConfig, n_q: usize, num_frames: usize) -> Result<Self> {
        let narrow = |v: usize, what: &str, max: usize| {
            if v > max {
                Err(Error::invalid(format!("{what} {v} does not fit the header")))
            } else {
                Ok(v)
            }
        };
        Ok(Self {
            version: VERSION,
            sample_rate: cfg.sample_rate,
            n_core: narrow(cfg.n_core, "n_core", 255)? as u8,
            n_hf: narrow(cfg.n_hf, "n_hf", 255)? as u8,
            n_q: narrow(n_q, "n_q", 255)? as u8,
            codebook_size: narrow(cfg.codebook_size, "codebook size", u16::MAX as usize)? as u16,
            hop: narrow(cfg.hop, "hop", u16::MAX as usize)? as u16,
            num_frames: narrow(num_frames, "frame count", u32::MAX as usize)? as u32,
        })
    }

    /// Bits per code index, `ceil(log2 M)`.
    pub fn bits_per_code(&self) -> u32 {
        (self.codebook_size as u32).next_power_of_two().trailing_zeros()
    }

    pub fn bytes_per_frame(&self) -> usize {
        (self.n_q as usize * self.bits_per_code() as usize).div_ceil(8)
    }

    /// Fails unless the stream was produced for a model with `cfg`.
    pub fn check_config(&self, cfg: &SbgConfig) -> Result<()> {
        let mut diffs = Vec::new();
        if self.sample_rate != cfg.sample_rate {
            diffs.push(format!("sample rate {} vs {}", self.sample_rate, cfg.sample_rate));
        }
        if self.n_core as usize != cfg.n_core || self.n_hf as usize != cfg.n_hf {
            diffs.push(format!(
                "band split ({}, {}) vs ({}, {})",
                self.n_core, self.n_hf, cfg.n_core, cfg.n_hf
            ));
        }
        if self.n_q as usize > cfg.n_q {
            diffs.push(format!("{} stages vs at most {}", self.n_q, cfg.n_q));
        }
        if self.codebook_size as usize != cfg.codebook_size {
            diffs.push(format!("codebook size {} vs {}", self.codebook_size, cfg.codebook_size));
        }
        if self.hop as usize != cfg.hop {
            diffs.push(format!("hop {} vs {}", self.hop, cfg.hop));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(format!("stream vs model: {}", diffs.join(", "))))
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.push(self.n_core);
        out.push(self.n_hf);
        out.push(self.n_q);
        out.extend_from_slice(&self.codebook_size.to_le_bytes());
        out.extend_from_slice(&self.hop.to_le_bytes());
        out.extend_from_slice(&self.num_frames.to_le_bytes());
    }

    fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::format("not an NSBG stream"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let h = Self {
            version: bytes[4],
            sample_rate: u32_at(5),
            n_core: bytes[9],
            n_hf: bytes[10],
            n_q: bytes[11],
            codebook_size: u16_at(12),
            hop: u16_at(14),
            num_frames: u32_at(16),
        };
        if h.version != VERSION {
            return Err(Error::format(format!("unsupported stream version {}", h.version)));
        }
        if h.codebook_size < 2 || h.hop == 0 {
            return Err(Error::format("header has an empty codebook or zero hop"));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SbgBitstream {
    pub header: Header,
    pub codes: CodeGrid,
}

impl SbgBitstream {
    pub fn new(header: Header, codes: CodeGrid) -> Result<Self> {
        if codes.n_q != header.n_q as usize || codes.frames != header.num_frames as usize {
            return Err(Error::shape(format!(
                "{} x {} codes for a {} x {} header",
                codes.n_q, codes.frames, header.n_q, header.num_frames
            )));
        }
        if let Some(&bad) = codes.indices.iter().find(|&&i| i >= header.codebook_size) {
            return Err(Error::invalid(format!("code {bad} outside a {}-entry codebook", header.codebook_size)));
        }
        Ok(Self { header, codes })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let bits = h.bits_per_code();
        let per_frame = h.bytes_per_frame();
        let mut out = Vec::with_capacity(HEADER_LEN + per_frame * h.num_frames as usize);
        h.write(&mut out);
        let mut frame = vec![0u8; per_frame];
        for t in 0..self.codes.frames {
            frame.iter_mut().for_each(|b| *b = 0);
            let mut pos = 0usize;
            for s in 0..self.codes.n_q {
                let code = self.codes.stage(s)[t] as u32;
                for k in (0..bits).rev() {
                    if (code >> k) & 1 == 1 {
                        frame[pos / 8] |= 0x80 >> (pos % 8);
                    }
                    pos += 1;
                }
            }
            out.extend_from_slice(&frame);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::read(bytes)?;
        let bits = header.bits_per_code();
        let per_frame = header.bytes_per_frame();
        let frames = header.num_frames as usize;
        let n_q = header.n_q as usize;
        let payload = &bytes[HEADER_LEN..];
        let expected = per_frame * frames;
        if payload.len() < expected {
            return Err(Error::format(format!(
                "truncated payload: {} of {expected} bytes",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::format(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let mut indices = vec![0u16; n_q * frames];
        for t in 0..frames {
            let frame = &payload[t * per_frame..(t + 1) * per_frame];
            let mut pos = 0usize;
            for s in 0..n_q {
                let mut code = 0u32;
                for _ in 0..bits {
                    code = (code << 1) | ((frame[pos / 8] >> (7 - pos % 8)) & 1) as u32;
                    pos += 1;
                }
                indices[s * frames + t] = code as u16;
            }
        }
        Self::new(header, CodeGrid::new(n_q, frames, indices)?)
    }

    /// Payload bits per second, excluding the header.
    pub fn payload_bitrate(&self) -> f64 {
        let h = &self.header;
        8.0 * h.bytes_per_frame() as f64 * h.sample_rate as f64 / h.hop as f64
    }
}
