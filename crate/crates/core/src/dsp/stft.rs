//! Causal short-time Fourier transform and log-power spectrogram.
//!
//! Frame `t` covers input samples `[(t+1)*hop - window_len, (t+1)*hop)`, with
//! zeros standing in for indices outside the signal. A frame therefore never
//! looks past `(t+1)*hop`, and the frame count is `ceil(len / hop)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Floor added inside `log10` by [`log_power`].
pub const LOG_POWER_EPS: f64 = 1e-10;

/// Window and FFT plans for one window length.
pub struct StftPlan {
    window_len: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<StftPlan>>> = RefCell::new(HashMap::new());
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

impl StftPlan {
    /// Returns a cached plan for `window_len` (must be even and non-zero).
    pub fn get(window_len: usize) -> Result<Arc<StftPlan>> {
        if window_len == 0 || window_len % 2 != 0 {
            return Err(Error::invalid(format!(
                "stft window length must be even and positive, got {window_len}"
            )));
        }
        Ok(PLANS.with(|plans| {
            plans
                .borrow_mut()
                .entry(window_len)
                .or_insert_with(|| {
                    let mut planner = FftPlanner::new();
                    Arc::new(StftPlan {
                        window_len,
                        window: hann_periodic(window_len),
                        forward: planner.plan_fft_forward(window_len),
                        inverse: planner.plan_fft_inverse(window_len),
                    })
                })
                .clone()
        }))
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn frames(len: usize, hop: usize) -> usize {
        len.div_ceil(hop)
    }

    /// Forward transform of `x`. Returns `(re, im)` laid out `[bin][frame]`.
    pub fn forward(&self, x: &[f64], hop: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.window_len;
        let bins = self.bins();
        let frames = Self::frames(x.len(), hop);
        let mut buf = vec![Complex::new(0.0, 0.0); n * frames];
        for (t, frame) in buf.chunks_exact_mut(n).enumerate() {
            let start = ((t + 1) * hop) as isize - n as isize;
            let lo = (-start).max(0) as usize;
            let hi = (x.len() as isize - start).clamp(0, n as isize) as usize;
            for j in lo..hi {
                frame[j].re = x[(start + j as isize) as usize] * self.window[j];
            }
        }
        // All frames in one call; rustfft transforms each chunk of `n`.
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        self.forward.process_with_scratch(&mut buf, &mut scratch);
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        for (t, frame) in buf.chunks_exact(n).enumerate() {
            for k in 0..bins {
                re[k * frames + t] = frame[k].re;
                im[k * frames + t] = frame[k].im;
            }
        }
        (re, im)
    }

    /// Adjoint of [`StftPlan::forward`]: maps gradients on `(re, im)` back to
    /// the `len` input samples.
    pub fn adjoint(&self, grad_re: &[f64], grad_im: &[f64], len: usize, hop: usize) -> Vec<f64> {
        let n = self.window_len;
        let bins = self.bins();
        let frames = Self::frames(len, hop);
        let mut buf = vec![Complex::new(0.0, 0.0); n * frames];
        for (t, frame) in buf.chunks_exact_mut(n).enumerate() {
            for k in 0..bins {
                frame[k] = Complex::new(grad_re[k * frames + t], grad_im[k * frames + t]);
            }
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        self.inverse.process_with_scratch(&mut buf, &mut scratch);
        let mut out = vec![0.0; len];
        for (t, frame) in buf.chunks_exact(n).enumerate() {
            let start = ((t + 1) * hop) as isize - n as isize;
            let lo = (-start).max(0) as usize;
            let hi = (len as isize - start).clamp(0, n as isize) as usize;
            for j in lo..hi {
                out[(start + j as isize) as usize] += self.window[j] * frame[j].re;
            }
        }
        out
    }
}

/// A real-valued time-frequency grid laid out `[bin][frame]` (one channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub hop: usize,
    pub bin_hz: f64,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    /// Rows `[start, end)` of the grid.
    pub fn bin_range(&self, start: usize, end: usize) -> Spectrogram {
        Spectrogram {
            values: self.values[start * self.frames..end * self.frames].to_vec(),
            bins: end - start,
            frames: self.frames,
            hop: self.hop,
            bin_hz: self.bin_hz,
        }
    }
}

/// Complex STFT output laid out `[bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub hop: usize,
    pub bin_hz: f64,
}

impl ComplexSpectrogram {
    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            values: self
                .re
                .iter()
                .zip(&self.im)
                .map(|(r, i)| r.hypot(*i))
                .collect(),
            bins: self.bins,
            frames: self.frames,
            hop: self.hop,
            bin_hz: self.bin_hz,
        }
    }
}

pub fn stft(x: &AudioBuffer, window_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if x.is_empty() {
        return Err(Error::invalid("stft of empty input"));
    }
    if hop == 0 || window_len < hop {
        return Err(Error::invalid(format!(
            "stft needs 0 < hop <= window_len, got hop {hop}, window {window_len}"
        )));
    }
    let plan = StftPlan::get(window_len)?;
    let (re, im) = plan.forward(x.samples(), hop);
    Ok(ComplexSpectrogram {
        bins: plan.bins(),
        frames: StftPlan::frames(x.len(), hop),
        re,
        im,
        hop,
        bin_hz: x.sample_rate() as f64 / window_len as f64,
    })
}

/// `log10(|X|^2 + eps)` elementwise.
pub fn log_power(spec: &ComplexSpectrogram, eps: f64) -> Result<Spectrogram> {
    if !(eps > 0.0) {
        return Err(Error::invalid("log_power eps must be positive"));
    }
    Ok(Spectrogram {
        values: spec
            .re
            .iter()
            .zip(&spec.im)
            .map(|(r, i)| (r * r + i * i + eps).log10())
            .collect(),
        bins: spec.bins,
        frames: spec.frames,
        hop: spec.hop,
        bin_hz: spec.bin_hz,
    })
}
