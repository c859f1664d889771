//! Differentiable signal-processing ops: STFT, magnitude, mel projection and
//! PQMF synthesis. Batched signals are `[B, L]`.

use std::sync::Arc;

use super::Tensor;
use crate::dsp::mel::MelFilterbank;
use crate::dsp::pqmf::PqmfBank;
use crate::dsp::stft::StftPlan;
use crate::error::Result;

fn batch_dims(x: &Tensor) -> (usize, usize) {
    assert_eq!(x.rank(), 2, "signal ops expect [B, L], got {:?}", x.shape());
    (x.dim(0), x.dim(1))
}

/// Complex STFT as `[B, 2, F, T]` with real and imaginary parts as channels.
pub fn stft_complex(x: &Tensor, window_len: usize, hop: usize) -> Result<Tensor> {
    let plan = StftPlan::get(window_len)?;
    let (batch, len) = batch_dims(x);
    let (bins, frames) = (plan.bins(), StftPlan::frames(len, hop));
    let grid = bins * frames;
    let mut out = Vec::with_capacity(batch * 2 * grid);
    {
        let xv = x.data();
        for b in 0..batch {
            let (re, im) = plan.forward(&xv[b * len..(b + 1) * len], hop);
            out.extend(re);
            out.extend(im);
        }
    }
    Ok(Tensor::from_op(out, vec![batch, 2, bins, frames], vec![x.clone()], move |g| {
        let mut gx = Vec::with_capacity(batch * len);
        for b in 0..batch {
            let base = b * 2 * grid;
            gx.extend(plan.adjoint(&g[base..base + grid], &g[base + grid..base + 2 * grid], len, hop));
        }
        vec![Some(gx)]
    }))
}

/// STFT magnitude as `[B, F, T]`. The gradient at zero magnitude is zero.
pub fn stft_magnitude(x: &Tensor, window_len: usize, hop: usize) -> Result<Tensor> {
    let plan = StftPlan::get(window_len)?;
    let (batch, len) = batch_dims(x);
    let (bins, frames) = (plan.bins(), StftPlan::frames(len, hop));
    let grid = bins * frames;
    let mut mag = Vec::with_capacity(batch * grid);
    // Unit phase per element, kept for the backward pass.
    let mut phase = Vec::with_capacity(batch * 2 * grid);
    {
        let xv = x.data();
        for b in 0..batch {
            let (re, im) = plan.forward(&xv[b * len..(b + 1) * len], hop);
            let start = mag.len();
            mag.extend(re.iter().zip(&im).map(|(r, i)| r.hypot(*i)));
            let m = &mag[start..];
            if x.requires_grad() {
                phase.extend(re.iter().zip(m).map(|(r, m)| if *m > 0.0 { r / m } else { 0.0 }));
                phase.extend(im.iter().zip(m).map(|(i, m)| if *m > 0.0 { i / m } else { 0.0 }));
            }
        }
    }
    Ok(Tensor::from_op(mag, vec![batch, bins, frames], vec![x.clone()], move |g| {
        let mut gx = Vec::with_capacity(batch * len);
        for b in 0..batch {
            let gb = &g[b * grid..(b + 1) * grid];
            let pr = &phase[b * 2 * grid..b * 2 * grid + grid];
            let pi = &phase[b * 2 * grid + grid..(b + 1) * 2 * grid];
            let gre: Vec<f64> = gb.iter().zip(pr).map(|(g, p)| g * p).collect();
            let gim: Vec<f64> = gb.iter().zip(pi).map(|(g, p)| g * p).collect();
            gx.extend(plan.adjoint(&gre, &gim, len, hop));
        }
        vec![Some(gx)]
    }))
}

/// Applies a mel filterbank to `[B, F, T]` magnitudes, giving `[B, n_mels, T]`.
pub fn mel_project(mag: &Tensor, fb: Arc<MelFilterbank>) -> Tensor {
    let (batch, bins, frames) = (mag.dim(0), mag.dim(1), mag.dim(2));
    assert_eq!(bins, fb.n_bins, "mel filterbank expects {} bins", fb.n_bins);
    let mut out = Vec::with_capacity(batch * fb.n_mels * frames);
    {
        let mv = mag.data();
        for b in 0..batch {
            out.extend(fb.apply(&mv[b * bins * frames..(b + 1) * bins * frames], frames));
        }
    }
    let n_mels = fb.n_mels;
    Tensor::from_op(out, vec![batch, n_mels, frames], vec![mag.clone()], move |g| {
        let mut gm = Vec::with_capacity(batch * bins * frames);
        for b in 0..batch {
            gm.extend(fb.apply_transpose(&g[b * n_mels * frames..(b + 1) * n_mels * frames], frames));
        }
        vec![Some(gm)]
    })
}

/// PQMF synthesis of `[B, K, Ls]` subbands into `[B, K * Ls]` audio.
pub fn pqmf_synthesize(bands: &Tensor, bank: Arc<PqmfBank>) -> Tensor {
    let (batch, k, ls) = (bands.dim(0), bands.dim(1), bands.dim(2));
    assert_eq!(k, bank.num_bands(), "pqmf synthesis expects {} bands", bank.num_bands());
    let n = k * ls;
    let mut out = Vec::with_capacity(batch * n);
    {
        let bv = bands.data();
        for b in 0..batch {
            out.extend(bank.synthesize_raw(&bv[b * n..(b + 1) * n], ls));
        }
    }
    Tensor::from_op(out, vec![batch, n], vec![bands.clone()], move |g| {
        let mut gb = Vec::with_capacity(batch * n);
        for b in 0..batch {
            gb.extend(bank.synthesize_adjoint(&g[b * n..(b + 1) * n], ls));
        }
        vec![Some(gb)]
    })
}

/// PQMF analysis of `[B, L]` audio into `[B, K, L / K]` subbands. Not
/// differentiated: it is only applied to fixed inputs.
pub fn pqmf_analyze(x: &Tensor, bank: &PqmfBank) -> Tensor {
    let (batch, len) = batch_dims(x);
    let k = bank.num_bands();
    assert_eq!(len % k, 0, "pqmf analysis length must be a multiple of {k}");
    let xv = x.data();
    let mut out = Vec::with_capacity(batch * len);
    for b in 0..batch {
        out.extend(bank.analyze_raw(&xv[b * len..(b + 1) * len]));
    }
    Tensor::from_vec(out, &[batch, k, len / k])
}
