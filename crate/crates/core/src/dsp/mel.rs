//! HTK mel filterbanks and the multi-resolution magnitude mel spectrogram.

use crate::audio::AudioBuffer;
use crate::dsp::stft::stft;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Window length, hop and mel-bin count of scale `i` (1..=7).
pub fn mel_scale_params(i: usize) -> Result<(usize, usize, usize)> {
    if !(1..=7).contains(&i) {
        return Err(Error::invalid(format!("mel scale index must be in 1..=7, got {i}")));
    }
    Ok((1 << (4 + i), 1 << (2 + i), 5 << i))
}

/// Sparse triangular mel filterbank. Row `m` holds weights for the
/// contiguous bin run starting at `rows[m].0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    /// Triangles with unit peak, linear in Hz between mel-spaced corner
    /// frequencies spanning 0 Hz to `sample_rate / 2`. Each weight is the
    /// mean of the triangle over the bin's frequency interval, so narrow
    /// low-frequency filters still touch at least one bin.
    pub fn htk(n_mels: usize, window_len: usize, sample_rate: f64) -> Self {
        let n_bins = window_len / 2 + 1;
        let bin_hz = sample_rate / window_len as f64;
        let nyquist = sample_rate / 2.0;
        let top = hz_to_mel(nyquist);
        let corners: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let rows = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (corners[m], corners[m + 1], corners[m + 2]);
                let mut start = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let a = (k as f64 - 0.5) * bin_hz;
                    let b = (k as f64 + 0.5) * bin_hz;
                    let (a, b) = (a.max(0.0), b.min(nyquist));
                    let w = triangle_integral(lo, mid, hi, a, b) / (b - a);
                    if w > 0.0 {
                        start.get_or_insert(k);
                        weights.push(w);
                    } else if start.is_some() {
                        break;
                    }
                }
                (start.unwrap_or(0), weights)
            })
            .collect();
        Self {
            n_mels,
            n_bins,
            rows,
        }
    }

    /// Applies the filterbank to a `[bin][frame]` grid, giving `[mel][frame]`.
    pub fn apply(&self, grid: &[f64], frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_mels * frames];
        for (m, (start, w)) in self.rows.iter().enumerate() {
            let dst = &mut out[m * frames..(m + 1) * frames];
            for (j, &wj) in w.iter().enumerate() {
                let src = &grid[(start + j) * frames..(start + j + 1) * frames];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wj * s;
                }
            }
        }
        out
    }

    /// Transpose of [`MelFilterbank::apply`].
    pub fn apply_transpose(&self, grad: &[f64], frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins * frames];
        for (m, (start, w)) in self.rows.iter().enumerate() {
            let src = &grad[m * frames..(m + 1) * frames];
            for (j, &wj) in w.iter().enumerate() {
                let dst = &mut out[(start + j) * frames..(start + j + 1) * frames];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wj * s;
                }
            }
        }
        out
    }

    pub fn dense_row(&self, m: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_bins];
        let (start, w) = &self.rows[m];
        row[*start..start + w.len()].copy_from_slice(w);
        row
    }
}

/// Integral over `[a, b]` of the unit-peak triangle with corners `lo, mid, hi`.
fn triangle_integral(lo: f64, mid: f64, hi: f64, a: f64, b: f64) -> f64 {
    let tri = |f: f64| {
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    };
    let mut points = vec![a];
    points.extend([lo, mid, hi].into_iter().filter(|&p| p > a && p < b));
    points.push(b);
    points
        .windows(2)
        .map(|w| 0.5 * (tri(w[0]) + tri(w[1])) * (w[1] - w[0]))
        .sum()
}

/// Magnitude mel spectrogram at scale `i`, laid out `[mel][frame]`.
pub fn mel_spectrogram(x: &AudioBuffer, i: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (win, hop, n_mels) = mel_scale_params(i)?;
    let spec = stft(x, win, hop)?;
    let mag = spec.magnitude();
    let fb = MelFilterbank::htk(n_mels, win, x.sample_rate() as f64);
    Ok((fb.apply(&mag.values, mag.frames), n_mels, mag.frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parameters() {
        assert_eq!(mel_scale_params(1).unwrap(), (32, 8, 10));
        assert_eq!(mel_scale_params(7).unwrap(), (2048, 512, 640));
        assert!(mel_scale_params(0).is_err());
        assert!(mel_scale_params(8).is_err());
    }

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 23_999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn every_filter_touches_a_bin() {
        for i in 1..=7 {
            let (win, _, n_mels) = mel_scale_params(i).unwrap();
            let fb = MelFilterbank::htk(n_mels, win, 48_000.0);
            for (m, (_, w)) in fb.rows.iter().enumerate() {
                assert!(w.iter().any(|&v| v > 0.0), "scale {i} filter {m} empty");
                assert!(w.iter().all(|&v| v <= 1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn wide_filters_peak_near_one() {
        let fb = MelFilterbank::htk(10, 2048, 48_000.0);
        for (_, w) in &fb.rows {
            let peak = w.iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.95, "{peak}");
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let fb = MelFilterbank::htk(20, 64, 48_000.0);
        let frames = 3;
        let x: Vec<f64> = (0..fb.n_bins * frames).map(|i| (i as f64).sin()).collect();
        let g: Vec<f64> = (0..fb.n_mels * frames).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = fb.apply(&x, frames).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = fb.apply_transpose(&g, frames).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn zero_input_gives_zero_mel() {
        let x = AudioBuffer::zeros(4096, 48_000);
        for i in [1, 4, 7] {
            let (m, _, _) = mel_spectrogram(&x, i).unwrap();
            assert!(m.iter().all(|&v| v == 0.0));
        }
    }
}
