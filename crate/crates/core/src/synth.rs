//! Synthetic training audio: harmonic tones with decaying partials over
//! slowly modulated, one-pole filtered noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{AudioBuffer, SAMPLE_RATE};

/// One clip of `len` samples at 48 kHz.
pub fn synth_clip(len: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let voices = rng.gen_range(2..=4);
    for _ in 0..voices {
        let f0: f64 = rng.gen_range(110.0..880.0);
        let amp: f64 = rng.gen_range(0.05..0.15);
        let tilt: f64 = rng.gen_range(0.6..1.4);
        let env_rate: f64 = rng.gen_range(0.3..3.0);
        let partials = ((20_000.0 / f0) as usize).max(1);
        // Each partial is a unit phasor advanced by complex rotation.
        let mut osc: Vec<(f64, f64, f64, f64, f64)> = (0..partials)
            .map(|k| {
                let h = (k + 1) as f64;
                let ph: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let w = std::f64::consts::TAU * f0 * h / fs;
                (ph.cos(), ph.sin(), w.cos(), w.sin(), h.powf(-tilt))
            })
            .collect();
        for (n, o) in out.iter_mut().enumerate() {
            let t = n as f64 / fs;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * env_rate * t).sin();
            let mut s = 0.0;
            for (re, im, c, sn, g) in osc.iter_mut() {
                s += *g * *im;
                let nr = *re * *c - *im * *sn;
                *im = *re * *sn + *im * *c;
                *re = nr;
            }
            *o += amp * env * s;
            if n % 4096 == 4095 {
                for (re, im, ..) in osc.iter_mut() {
                    let r = re.hypot(*im);
                    *re /= r;
                    *im /= r;
                }
            }
        }
    }
    // Noise through a one-pole filter: low-pass or high-pass per clip.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pole: f64 = rng.gen_range(0.1..0.9);
    let high = rng.gen_bool(0.5);
    let level: f64 = rng.gen_range(0.01..0.05);
    let rate: f64 = rng.gen_range(0.2..2.0);
    let mut state = 0.0;
    for (n, o) in out.iter_mut().enumerate() {
        let w: f64 = normal.sample(&mut rng);
        state = pole * state + (1.0 - pole) * w;
        let v = if high { w - state } else { state };
        let env = 0.5 + 0.5 * (std::f64::consts::TAU * rate * n as f64 / fs).sin().abs();
        *o += level * env * v;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        out.iter_mut().for_each(|v| *v *= 0.95 / peak);
    }
    AudioBuffer::new(out, SAMPLE_RATE).expect("finite synthetic audio")
}

/// `count` clips of `clip_len` samples each.
pub fn synth_corpus(count: usize, clip_len: usize, seed: u64) -> Vec<AudioBuffer> {
    (0..count).map(|i| synth_clip(clip_len, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))).collect()
}
