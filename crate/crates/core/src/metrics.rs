//! Objective comparison of a decoded signal against a reference.

use serde::Serialize;

use crate::audio::AudioBuffer;
use crate::bitstream::SbgBitstream;
use crate::config::{side_info_bitrate, SbgConfig};
use crate::dsp::pqmf::{pqmf_analysis, PqmfBank};
use crate::dsp::stft::{log_power, stft, LOG_POWER_EPS};
use crate::encoder::select_hf_bins;
use crate::error::{Error, Result};

/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideInfoRate {
    pub formula_bps: f64,
    pub measured_bps: f64,
}

impl SideInfoRate {
    pub fn of(bs: &SbgBitstream) -> Result<Self> {
        let h = &bs.header;
        let r = side_info_bitrate(h.sample_rate, h.hop as usize, h.n_q as usize, h.codebook_size as usize)?;
        Ok(Self {
            formula_bps: *r.numer() as f64 / *r.denom() as f64,
            measured_bps: bs.payload_bitrate(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// Log-spectral distance over the generated bins, in dB.
    pub lsd_db: f64,
    /// Per PQMF band, capped at [`SNR_CAP_DB`].
    pub band_snr_db: Vec<f64>,
    pub side_info: Option<SideInfoRate>,
}

/// `10 log10(signal / noise)`, capped; zero noise gives the cap.
pub fn snr_db(signal: f64, noise: f64) -> f64 {
    if noise <= 0.0 {
        return SNR_CAP_DB;
    }
    if signal <= 0.0 {
        return -SNR_CAP_DB;
    }
    (10.0 * (signal / noise).log10()).clamp(-SNR_CAP_DB, SNR_CAP_DB)
}

/// Frame-mean of the RMS difference of `10 log10` power spectra over the
/// generation range.
pub fn log_spectral_distance(reference: &AudioBuffer, test: &AudioBuffer, cfg: &SbgConfig) -> Result<f64> {
    check_pair(reference, test)?;
    let a = select_hf_bins(&log_power(&stft(reference, cfg.window, cfg.hop)?, LOG_POWER_EPS)?, cfg)?;
    let b = select_hf_bins(&log_power(&stft(test, cfg.window, cfg.hop)?, LOG_POWER_EPS)?, cfg)?;
    let mut total = 0.0;
    for t in 0..a.frames {
        let ms: f64 = (0..a.bins)
            .map(|k| {
                let d = 10.0 * (a.at(k, t) - b.at(k, t));
                d * d
            })
            .sum::<f64>()
            / a.bins as f64;
        total += ms.sqrt();
    }
    Ok(total / a.frames as f64)
}

/// SNR of each PQMF band of `test` against the same band of `reference`.
pub fn band_snr(reference: &AudioBuffer, test: &AudioBuffer, bank: &PqmfBank) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    let a = pqmf_analysis(reference, bank);
    let b = pqmf_analysis(test, bank);
    Ok((0..a.num_bands)
        .map(|k| {
            let s = a.band_energy(k);
            let n: f64 = a.band(k).iter().zip(b.band(k)).map(|(x, y)| (x - y) * (x - y)).sum();
            snr_db(s, n)
        })
        .collect())
}

fn check_pair(reference: &AudioBuffer, test: &AudioBuffer) -> Result<()> {
    if reference.sample_rate() != test.sample_rate() {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate(),
            test.sample_rate()
        )));
    }
    if reference.len() != test.len() {
        return Err(Error::shape(format!(
            "lengths differ: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("empty signals"));
    }
    Ok(())
}

/// Drops `delay` leading samples of `test`, then compares.
pub fn evaluate(reference: &AudioBuffer, test: &AudioBuffer, delay: usize, cfg: &SbgConfig, bank: &PqmfBank) -> Result<MetricReport> {
    let test = if delay > 0 {
        if delay > test.len() {
            return Err(Error::shape("delay exceeds the test signal"));
        }
        AudioBuffer::new(test.samples()[delay..].to_vec(), test.sample_rate())?
    } else {
        test.clone()
    };
    Ok(MetricReport {
        lsd_db: log_spectral_distance(reference, &test, cfg)?,
        band_snr_db: band_snr(reference, &test, bank)?,
        side_info: None,
    })
}
