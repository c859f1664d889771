//! Core codec interface: a PQMF-domain surrogate and a subprocess adapter
//! for external codecs.

use std::process::Command;
use std::sync::Arc;

use crate::audio::{read_wav, write_wav, AudioBuffer, WavFormat};
use crate::config::{CoreConfig, CoreKind};
use crate::dsp::pqmf::{pqmf_analysis, PqmfBank, SubbandFrameSet};
use crate::error::{Error, Result};

/// A fixed (untrained) band-limited codec.
pub trait CoreCodec {
    fn encode(&self, x: &AudioBuffer) -> Result<Vec<u8>>;
    /// Output has the length of the encoded input.
    fn decode(&self, payload: &[u8]) -> Result<AudioBuffer>;
    fn bandwidth_hz(&self) -> f64;

    fn round_trip(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        self.decode(&self.encode(x)?)
    }
}

/// Keeps the lowest PQMF bands and quantizes their samples uniformly.
pub struct SurrogateCore {
    bank: Arc<PqmfBank>,
    keep_bands: usize,
    quant_bits: u32,
}

const SURROGATE_HEADER: usize = 14;

impl SurrogateCore {
    pub fn new(bank: Arc<PqmfBank>, keep_bands: usize, quant_bits: u32) -> Result<Self> {
        if keep_bands == 0 || keep_bands > bank.num_bands() {
            return Err(Error::invalid(format!(
                "keep_bands {keep_bands} outside 1..={}",
                bank.num_bands()
            )));
        }
        if !(2..=16).contains(&quant_bits) {
            return Err(Error::invalid(format!("quant_bits {quant_bits} outside 2..=16")));
        }
        Ok(Self {
            bank,
            keep_bands,
            quant_bits,
        })
    }

    fn levels(&self) -> f64 {
        ((1u32 << (self.quant_bits - 1)) - 1) as f64
    }
}

impl CoreCodec for SurrogateCore {
    /// Payload: sample rate, original length, band length (u32 LE each),
    /// kept bands and bit depth (u8 each), then `i16` LE levels band-major.
    fn encode(&self, x: &AudioBuffer) -> Result<Vec<u8>> {
        let sub = pqmf_analysis(x, &self.bank);
        let q = self.levels();
        let mut out = Vec::with_capacity(SURROGATE_HEADER + 2 * self.keep_bands * sub.len);
        out.extend_from_slice(&x.sample_rate().to_le_bytes());
        out.extend_from_slice(&(sub.original_len as u32).to_le_bytes());
        out.extend_from_slice(&(sub.len as u32).to_le_bytes());
        out.push(self.keep_bands as u8);
        out.push(self.quant_bits as u8);
        for &v in &sub.bands[..self.keep_bands * sub.len] {
            let level = (v.clamp(-1.0, 1.0) * q).round() as i16;
            out.extend_from_slice(&level.to_le_bytes());
        }
        Ok(out)
    }

    fn decode(&self, payload: &[u8]) -> Result<AudioBuffer> {
        if payload.len() < SURROGATE_HEADER {
            return Err(Error::format("truncated core payload"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(payload[i..i + 4].try_into().expect("4 bytes"));
        let (rate, original, len) = (u32_at(0), u32_at(4) as usize, u32_at(8) as usize);
        let (keep, bits) = (payload[12] as usize, payload[13] as u32);
        if keep != self.keep_bands || bits != self.quant_bits {
            return Err(Error::ConfigMismatch(format!(
                "core payload has {keep} bands at {bits} bits, codec expects {} at {}",
                self.keep_bands, self.quant_bits
            )));
        }
        let k = self.bank.num_bands();
        if payload.len() != SURROGATE_HEADER + 2 * keep * len || original > k * len {
            return Err(Error::format("core payload length does not match its header"));
        }
        let q = self.levels();
        let mut bands = vec![0.0; k * len];
        for (i, b) in payload[SURROGATE_HEADER..].chunks_exact(2).enumerate() {
            bands[i] = i16::from_le_bytes([b[0], b[1]]) as f64 / q;
        }
        let sub = SubbandFrameSet::new(bands, k, len, rate)?;
        let y = crate::dsp::pqmf::pqmf_synthesis(&sub, &self.bank)?;
        Ok(y.truncated(original))
    }

    fn bandwidth_hz(&self) -> f64 {
        self.keep_bands as f64 * 24_000.0 / self.bank.num_bands() as f64
    }
}

/// Runs external encoder and decoder command lines on temporary files.
/// `{input}` and `{output}` in the templates are replaced by file paths.
pub struct ExternalCore {
    encode_cmd: String,
    decode_cmd: String,
    delay: usize,
    bandwidth_hz: f64,
}

impl ExternalCore {
    pub fn new(encode_cmd: &str, decode_cmd: &str, delay: usize, bandwidth_hz: f64) -> Result<Self> {
        for (name, t) in [("encode", encode_cmd), ("decode", decode_cmd)] {
            if !t.contains("{input}") || !t.contains("{output}") {
                return Err(Error::Config(format!(
                    "{name} command must contain {{input}} and {{output}}: `{t}`"
                )));
            }
        }
        Ok(Self {
            encode_cmd: encode_cmd.to_string(),
            decode_cmd: decode_cmd.to_string(),
            delay,
            bandwidth_hz,
        })
    }

    fn run(template: &str, input: &std::path::Path, output: &std::path::Path) -> Result<()> {
        let quote = |p: &std::path::Path| format!("'{}'", p.display().to_string().replace('\'', r"'\''"));
        let command = template
            .replace("{input}", &quote(input))
            .replace("{output}", &quote(output));
        log::debug!("running core command: {command}");
        let out = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .output()
            .map_err(|e| Error::External {
                command: command.clone(),
                detail: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(Error::External {
                command,
                detail: format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
            });
        }
        Ok(())
    }
}

impl CoreCodec for ExternalCore {
    /// Payload: original length and sample rate (u32 LE), then the external
    /// encoder's output bytes.
    fn encode(&self, x: &AudioBuffer) -> Result<Vec<u8>> {
        let dir = tempfile::tempdir()?;
        let (input, output) = (dir.path().join("input.wav"), dir.path().join("payload.bin"));
        write_wav(&input, x, WavFormat::Float32)?;
        Self::run(&self.encode_cmd, &input, &output)?;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(x.len() as u32).to_le_bytes());
        payload.extend_from_slice(&x.sample_rate().to_le_bytes());
        payload.extend(std::fs::read(&output)?);
        Ok(payload)
    }

    fn decode(&self, payload: &[u8]) -> Result<AudioBuffer> {
        if payload.len() < 8 {
            return Err(Error::format("truncated core payload"));
        }
        let len = u32::from_le_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
        let rate = u32::from_le_bytes(payload[4..8].try_into().expect("4 bytes"));
        let dir = tempfile::tempdir()?;
        let (input, output) = (dir.path().join("payload.bin"), dir.path().join("output.wav"));
        std::fs::write(&input, &payload[8..])?;
        Self::run(&self.decode_cmd, &input, &output)?;
        let y = read_wav(&output)?;
        y.require_rate(rate)?;
        let mut samples = y.into_samples();
        samples.drain(..self.delay.min(samples.len()));
        samples.resize(len, 0.0);
        AudioBuffer::new(samples, rate)
    }

    fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }
}

/// Builds the core codec selected by `cfg`.
pub fn core_from_config(cfg: &CoreConfig, bank: Arc<PqmfBank>) -> Result<Box<dyn CoreCodec>> {
    match cfg.kind {
        CoreKind::Surrogate => Ok(Box::new(SurrogateCore::new(bank, cfg.keep_bands, cfg.quant_bits)?)),
        CoreKind::External => Ok(Box::new(ExternalCore::new(
            &cfg.encode_cmd,
            &cfg.decode_cmd,
            cfg.delay,
            cfg.bandwidth_hz,
        )?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::pqmf::default_bank;

    fn tone(len: usize) -> AudioBuffer {
        AudioBuffer::new((0..len).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect(), 48_000).unwrap()
    }

    #[test]
    fn surrogate_zero_in_zero_out() {
        let core = SurrogateCore::new(Arc::new(default_bank()), 5, 8).unwrap();
        let y = core.round_trip(&AudioBuffer::zeros(1000, 48_000)).unwrap();
        assert_eq!(y.len(), 1000);
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surrogate_rejects_bad_parameters() {
        let bank = Arc::new(default_bank());
        assert!(SurrogateCore::new(bank.clone(), 5, 1).is_err());
        assert!(SurrogateCore::new(bank.clone(), 0, 8).is_err());
        assert!(SurrogateCore::new(bank, 33, 8).is_err());
    }

    #[test]
    fn surrogate_payload_checks() {
        let core = SurrogateCore::new(Arc::new(default_bank()), 5, 8).unwrap();
        let p = core.encode(&tone(640)).unwrap();
        assert!(core.decode(&p[..p.len() - 1]).is_err());
        let other = SurrogateCore::new(Arc::new(default_bank()), 6, 8).unwrap();
        assert!(matches!(other.decode(&p), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn external_copy_is_identity() {
        let core = ExternalCore::new("cp {input} {output}", "cp {input} {output}", 0, 3750.0).unwrap();
        let x = tone(777);
        let y = core.round_trip(&x).unwrap();
        let xf: Vec<f64> = x.samples().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(y.samples(), &xf[..]);
    }

    #[test]
    fn external_missing_binary_reports_command() {
        let core = ExternalCore::new("no-such-codec-xyz {input} {output}", "cp {input} {output}", 0, 1.0).unwrap();
        let err = core.encode(&tone(10)).unwrap_err().to_string();
        assert!(err.contains("no-such-codec-xyz"), "{err}");
    }

    #[test]
    fn external_template_needs_placeholders() {
        assert!(ExternalCore::new("cp a b", "cp {input} {output}", 0, 1.0).is_err());
    }
}
