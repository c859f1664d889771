//! Mono audio buffers and WAV ingestion.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Sample rate the whole system runs at.
pub const SAMPLE_RATE: u32 = 48_000;

/// A mono sample sequence with its sample rate. Samples are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::invalid(format!(
                "expected {rate} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Zero-pads at the end to a multiple of `multiple` samples. At least one
    /// block is produced for empty input.
    pub fn padded_to_multiple(&self, multiple: usize) -> AudioBuffer {
        let target = self.len().div_ceil(multiple).max(1) * multiple;
        let mut samples = self.samples.clone();
        samples.resize(target, 0.0);
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> AudioBuffer {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Bit depth used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a mono WAV file (16-bit PCM or 32-bit float). Multi-channel input is
/// rejected rather than downmixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wrap = |source| Error::Wav {
        path: Some(path.to_path_buf()),
        source,
    };
    let reader = WavReader::open(path).map_err(wrap)?;
    read_from(reader).map_err(|e| match e {
        Error::Wav { path: None, source } => wrap(source),
        other => other,
    })
}

/// Same as [`read_wav`] but from an in-memory byte slice.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader = WavReader::new(std::io::Cursor::new(bytes))?;
    read_from(reader)
}

fn read_from<R: std::io::Read>(reader: WavReader<R>) -> Result<AudioBuffer> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(format!(
                "unsupported wav sample format {fmt:?} at {bits} bits"
            )))
        }
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    write_to(std::io::BufWriter::new(file), audio, format).map_err(|e| match e {
        Error::Wav { path: None, source } => Error::Wav {
            path: Some(path.to_path_buf()),
            source,
        },
        other => other,
    })
}

pub fn wav_bytes(audio: &AudioBuffer, format: WavFormat) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    write_to(&mut cursor, audio, format)?;
    Ok(cursor.into_inner())
}

fn write_to<W: std::io::Write + std::io::Seek>(
    sink: W,
    audio: &AudioBuffer,
    format: WavFormat,
) -> Result<()> {
    let (bits_per_sample, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample,
        sample_format,
    };
    let mut writer = WavWriter::new(sink, spec)?;
    for &s in &audio.samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
            WavFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 48_000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn padding_keeps_prefix() {
        let a = AudioBuffer::new(vec![1.0; 3000], 48_000).unwrap();
        let p = a.padded_to_multiple(2048);
        assert_eq!(p.len(), 4096);
        assert_eq!(&p.samples()[..3000], a.samples());
        assert!(p.samples()[3000..].iter().all(|&s| s == 0.0));
        assert_eq!(AudioBuffer::zeros(0, 48_000).padded_to_multiple(2048).len(), 2048);
    }

    #[test]
    fn float_wav_round_trip_is_exact_for_f32_values() {
        let samples: Vec<f64> = (0..500).map(|i| ((i as f32) * 0.01).sin() as f64).collect();
        let a = AudioBuffer::new(samples, 48_000).unwrap();
        let bytes = wav_bytes(&a, WavFormat::Float32).unwrap();
        assert_eq!(read_wav_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn stereo_is_rejected() {
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut cursor = std::io::Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut cursor, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav_bytes(cursor.get_ref()).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }
}
