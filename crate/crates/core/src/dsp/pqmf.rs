//! Cosine-modulated pseudo-QMF filterbank.
//!
//! The prototype is a Kaiser-windowed ideal lowpass whose cutoff is tuned so
//! that the prototype's autocorrelation is (nearly) a 2M-th band filter,
//! which is the near-perfect-reconstruction condition for the modulated bank.
//!
//! Analysis is advanced by `L/2` samples and synthesis by `L/2 - 1`, so the
//! analysis/synthesis chain has zero net delay and subband sample `m` of every
//! band is aligned with input samples `[m*M, (m+1)*M)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Minimum white-noise reconstruction SNR a bank must reach to be accepted.
pub const MIN_RECONSTRUCTION_SNR_DB: f64 = 50.0;

/// Stopband attenuation used by the system's default 32-band bank.
pub const DEFAULT_STOPBAND_DB: f64 = 80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PqmfBank {
    num_bands: usize,
    prototype: Vec<f64>,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    beta: f64,
    cutoff: f64,
    stopband_db: f64,
    snr_db: f64,
}

/// Critically sampled subband signals laid out `[band][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandFrameSet {
    pub bands: Vec<f64>,
    pub num_bands: usize,
    pub len: usize,
    /// Input length before padding to a multiple of `num_bands`.
    pub original_len: usize,
    pub sample_rate: u32,
}

impl SubbandFrameSet {
    pub fn new(bands: Vec<f64>, num_bands: usize, len: usize, sample_rate: u32) -> Result<Self> {
        if bands.len() != num_bands * len {
            return Err(Error::shape(format!(
                "subband data has {} values, expected {num_bands} x {len}",
                bands.len()
            )));
        }
        Ok(Self {
            bands,
            num_bands,
            len,
            original_len: num_bands * len,
            sample_rate,
        })
    }

    pub fn band(&self, k: usize) -> &[f64] {
        &self.bands[k * self.len..(k + 1) * self.len]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.bands[k * self.len..(k + 1) * self.len]
    }

    pub fn band_width_hz(&self) -> f64 {
        self.sample_rate as f64 / (2 * self.num_bands) as f64
    }

    pub fn band_energy(&self, k: usize) -> f64 {
        self.band(k).iter().map(|v| v * v).sum()
    }

    /// Copy holding only bands `[start, end)`, laid out contiguously.
    pub fn band_slice(&self, start: usize, end: usize) -> Vec<f64> {
        self.bands[start * self.len..end * self.len].to_vec()
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let half = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let r = (n as f64 - half) / half;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser's empirical beta for a given stopband attenuation.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

fn lowpass_prototype(len: usize, cutoff: f64, window: &[f64]) -> Vec<f64> {
    let center = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let t = n as f64 - center;
            let ideal = if t == 0.0 {
                cutoff / PI
            } else {
                (cutoff * t).sin() / (PI * t)
            };
            ideal * window[n]
        })
        .collect()
}

/// Deviation of the prototype autocorrelation from a 2M-th band filter with
/// centre tap 1/(2M).
fn nyquist_deviation(h: &[f64], num_bands: usize) -> f64 {
    let step = 2 * num_bands;
    let mut worst: f64 = 0.0;
    let mut lag = 0;
    while lag < h.len() {
        let p: f64 = h[..h.len() - lag].iter().zip(&h[lag..]).map(|(a, b)| a * b).sum();
        let target = if lag == 0 { 1.0 / step as f64 } else { 0.0 };
        worst = worst.max((p - target).abs());
        lag += step;
    }
    worst
}

fn optimize_cutoff(len: usize, num_bands: usize, window: &[f64]) -> f64 {
    let band = PI / num_bands as f64;
    let f = |c: f64| nyquist_deviation(&lowpass_prototype(len, c, window), num_bands);
    let (lo, hi) = (0.3 * band, 0.95 * band);
    let steps = 64;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b])))
        .unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(steps)];
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Designs a `num_bands`-channel bank with a prototype of
/// `num_bands * taps_per_band` coefficients.
///
/// Fails when the requested stopband attenuation is not met (more than 1 dB
/// short, measured from 1.5 band widths) or when the resulting bank does not
/// reconstruct white noise at [`MIN_RECONSTRUCTION_SNR_DB`].
pub fn design_pqmf(num_bands: usize, taps_per_band: usize, stopband_atten_db: f64) -> Result<PqmfBank> {
    if num_bands < 2 {
        return Err(Error::invalid(format!("pqmf needs at least 2 bands, got {num_bands}")));
    }
    if taps_per_band < 4 {
        return Err(Error::invalid(format!(
            "pqmf needs at least 4 taps per band, got {taps_per_band}"
        )));
    }
    if !(stopband_atten_db > 0.0) {
        return Err(Error::invalid("stopband attenuation must be positive"));
    }
    let len = num_bands * taps_per_band;
    let beta = kaiser_beta(stopband_atten_db);
    let window = kaiser_window(len, beta);
    let cutoff = optimize_cutoff(len, num_bands, &window);
    let prototype = lowpass_prototype(len, cutoff, &window);
    let mut bank = PqmfBank::from_prototype(num_bands, prototype)?;
    bank.beta = beta;
    bank.cutoff = cutoff;
    if bank.stopband_db < stopband_atten_db - 1.0 || bank.snr_db < MIN_RECONSTRUCTION_SNR_DB {
        return Err(Error::PqmfDesign {
            requested_db: stopband_atten_db,
            achieved_db: bank.stopband_db,
            snr_db: bank.snr_db,
        });
    }
    Ok(bank)
}

/// The 32-band, 256-tap bank the codec runs on.
pub fn default_bank() -> PqmfBank {
    design_pqmf(32, 8, DEFAULT_STOPBAND_DB).expect("default pqmf design is feasible")
}

impl PqmfBank {
    /// Builds the modulated analysis/synthesis filters for `prototype`.
    pub fn from_prototype(num_bands: usize, prototype: Vec<f64>) -> Result<Self> {
        if num_bands < 2 || prototype.len() < 2 * num_bands {
            return Err(Error::invalid("prototype too short for the band count"));
        }
        let len = prototype.len();
        let center = (len - 1) as f64 / 2.0;
        let mut analysis = vec![0.0; num_bands * len];
        let mut synthesis = vec![0.0; num_bands * len];
        for k in 0..num_bands {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let freq = (2 * k + 1) as f64 * PI / (2 * num_bands) as f64;
            for n in 0..len {
                let arg = freq * (n as f64 - center);
                analysis[k * len + n] = 2.0 * prototype[n] * (arg + sign * PI / 4.0).cos();
                synthesis[k * len + n] = 2.0 * prototype[n] * (arg - sign * PI / 4.0).cos();
            }
        }
        let mut bank = Self {
            num_bands,
            prototype,
            analysis,
            synthesis,
            beta: f64::NAN,
            cutoff: f64::NAN,
            stopband_db: 0.0,
            snr_db: 0.0,
        };
        bank.stopband_db = bank.measure_stopband_db();
        bank.snr_db = bank.measure_reconstruction_snr_db();
        Ok(bank)
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn prototype(&self) -> &[f64] {
        &self.prototype
    }

    pub fn taps_per_band(&self) -> usize {
        self.prototype.len() / self.num_bands
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Prototype cutoff in radians per sample.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn stopband_db(&self) -> f64 {
        self.stopband_db
    }

    /// White-noise reconstruction SNR of analysis followed by synthesis.
    pub fn reconstruction_snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn analysis_filter(&self, k: usize) -> &[f64] {
        let l = self.prototype.len();
        &self.analysis[k * l..(k + 1) * l]
    }

    pub fn synthesis_filter(&self, k: usize) -> &[f64] {
        let l = self.prototype.len();
        &self.synthesis[k * l..(k + 1) * l]
    }

    fn analysis_advance(&self) -> usize {
        self.prototype.len() / 2
    }

    fn synthesis_advance(&self) -> usize {
        self.prototype.len() - 1 - self.analysis_advance()
    }

    /// Peak prototype response at or above 1.5 band widths, in dB below DC.
    fn measure_stopband_db(&self) -> f64 {
        let n = 16_384;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new(self.prototype.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let dc = buf[0].norm();
        let edge = (1.5 * n as f64 / (2 * self.num_bands) as f64).ceil() as usize;
        let peak = buf[edge..=n / 2].iter().map(|c| c.norm()).fold(0.0, f64::max);
        -20.0 * (peak / dc).max(1e-300).log10()
    }

    /// The chain is M-periodic and linear, so its white-noise error power is
    /// the mean error energy of the impulse responses at the M input phases.
    fn measure_reconstruction_snr_db(&self) -> f64 {
        let l = self.prototype.len();
        let m = self.num_bands;
        let n = 3 * l.div_ceil(m) * m;
        let mut err = 0.0;
        for phase in 0..m {
            let pos = l.div_ceil(m) * m + phase;
            let mut x = vec![0.0; n];
            x[pos] = 1.0;
            let bands = self.analyze_raw(&x);
            let mut y = self.synthesize_raw(&bands, n / m);
            y[pos] -= 1.0;
            err += y.iter().map(|v| v * v).sum::<f64>();
        }
        -10.0 * (err / m as f64).max(1e-300).log10()
    }

    /// Analysis of a signal whose length is a multiple of the band count.
    /// Returns `[band][sample]`.
    pub fn analyze_raw(&self, x: &[f64]) -> Vec<f64> {
        let m = self.num_bands;
        let l = self.prototype.len();
        assert_eq!(x.len() % m, 0, "analysis input must be a multiple of the band count");
        let ls = x.len() / m;
        let adv = self.analysis_advance() as isize;
        let mut out = vec![0.0; m * ls];
        let mut frame = vec![0.0; l];
        for s in 0..ls {
            // frame[j] = x[s*M + adv - j]
            let base = (s * m) as isize + adv;
            let mut any = false;
            for (j, f) in frame.iter_mut().enumerate() {
                let idx = base - j as isize;
                *f = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                any |= *f != 0.0;
            }
            if !any {
                continue;
            }
            for k in 0..m {
                let h = &self.analysis[k * l..(k + 1) * l];
                out[k * ls + s] = h.iter().zip(&frame).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// Synthesis from `[band][sample]` data with `ls` samples per band.
    pub fn synthesize_raw(&self, bands: &[f64], ls: usize) -> Vec<f64> {
        let m = self.num_bands;
        let l = self.prototype.len();
        let n = m * ls;
        let adv = self.synthesis_advance() as isize;
        let mut y = vec![0.0; n];
        for k in 0..m {
            let g = &self.synthesis[k * l..(k + 1) * l];
            for s in 0..ls {
                let b = bands[k * ls + s];
                if b == 0.0 {
                    continue;
                }
                let scale = m as f64 * b;
                let base = (s * m) as isize - adv;
                let j0 = (-base).max(0) as usize;
                let j1 = ((n as isize - base).max(0) as usize).min(l);
                for j in j0..j1 {
                    y[(base + j as isize) as usize] += scale * g[j];
                }
            }
        }
        y
    }

    /// Adjoint of [`PqmfBank::synthesize_raw`].
    pub fn synthesize_adjoint(&self, grad: &[f64], ls: usize) -> Vec<f64> {
        let m = self.num_bands;
        let l = self.prototype.len();
        let n = m * ls;
        let adv = self.synthesis_advance() as isize;
        let mut out = vec![0.0; m * ls];
        for k in 0..m {
            let g = &self.synthesis[k * l..(k + 1) * l];
            for s in 0..ls {
                let base = (s * m) as isize - adv;
                let j0 = (-base).max(0) as usize;
                let j1 = ((n as isize - base).max(0) as usize).min(l);
                let mut acc = 0.0;
                for j in j0..j1 {
                    acc += g[j] * grad[(base + j as isize) as usize];
                }
                out[k * ls + s] = m as f64 * acc;
            }
        }
        out
    }

    pub fn write_prototype_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "index,prototype")?;
        for (i, v) in self.prototype.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits `x` into critically sampled subbands. Input is zero-padded at the
/// end to a multiple of the band count; the original length is recorded.
pub fn pqmf_analysis(x: &AudioBuffer, bank: &PqmfBank) -> SubbandFrameSet {
    let m = bank.num_bands;
    let original_len = x.len();
    let padded = x.len().div_ceil(m) * m;
    let bands = if padded == original_len {
        bank.analyze_raw(x.samples())
    } else {
        let mut buf = x.samples().to_vec();
        buf.resize(padded, 0.0);
        bank.analyze_raw(&buf)
    };
    SubbandFrameSet {
        bands,
        num_bands: m,
        len: padded / m,
        original_len,
        sample_rate: x.sample_rate(),
    }
}

/// Recombines subbands into a signal of `num_bands * len` samples.
pub fn pqmf_synthesis(bands: &SubbandFrameSet, bank: &PqmfBank) -> Result<AudioBuffer> {
    if bands.num_bands != bank.num_bands {
        return Err(Error::shape(format!(
            "subband set has {} bands, bank has {}",
            bands.num_bands, bank.num_bands
        )));
    }
    if bands.bands.len() != bands.num_bands * bands.len {
        return Err(Error::shape("subband channels have inconsistent lengths"));
    }
    AudioBuffer::new(bank.synthesize_raw(&bands.bands, bands.len), bands.sample_rate)
}

/// Builds a subband set from per-band channels, checking they share a length.
pub fn subbands_from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<SubbandFrameSet> {
    let len = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::shape("subband channels have different lengths"));
    }
    SubbandFrameSet::new(channels.concat(), channels.len(), len, sample_rate)
}
