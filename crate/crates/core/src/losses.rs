//! Multi-scale mel loss, hinge adversarial losses, feature matching and the
//! weighted generator objective.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::audio::AudioBuffer;
use crate::config::LossWeights;
use crate::discriminator::DiscOutput;
use crate::dsp::mel::{mel_scale_params, MelFilterbank};
use crate::error::{Error, Result};
use crate::tensor::signal::{mel_project, stft_magnitude};
use crate::tensor::{no_grad, Tensor};

/// Mel magnitudes are clamped here before the logarithm.
pub const MEL_FLOOR: f64 = 1e-5;

/// Number of mel resolutions summed by [`mel_loss`].
pub const MEL_SCALES: usize = 7;

/// Floor on the feature-matching normalizer.
pub const FM_NORM_FLOOR: f64 = 1e-8;

thread_local! {
    static FILTERBANKS: RefCell<HashMap<(usize, usize, u32), Arc<MelFilterbank>>> = RefCell::new(HashMap::new());
}

fn filterbank(n_mels: usize, window: usize, sample_rate: u32) -> Arc<MelFilterbank> {
    FILTERBANKS.with(|c| {
        c.borrow_mut()
            .entry((n_mels, window, sample_rate))
            .or_insert_with(|| Arc::new(MelFilterbank::htk(n_mels, window, sample_rate as f64)))
            .clone()
    })
}

/// Clamped log10 mel magnitudes of `[B, L]` at scale `i`.
pub fn log_mel(x: &Tensor, i: usize, sample_rate: u32) -> Result<Tensor> {
    let (win, hop, n_mels) = mel_scale_params(i)?;
    let mag = stft_magnitude(x, win, hop)?;
    Ok(mel_project(&mag, filterbank(n_mels, win, sample_rate)).log10_clamped(MEL_FLOOR))
}

/// Sum over the seven scales of the element-mean absolute log-mel
/// difference between `[B, L]` signals. The target carries no gradient.
pub fn mel_loss_tensor(x_hat: &Tensor, x_tgt: &Tensor, sample_rate: u32) -> Result<Tensor> {
    if x_hat.shape() != x_tgt.shape() || x_hat.rank() != 2 {
        return Err(Error::shape(format!(
            "mel loss needs equal [B, L] shapes, got {:?} and {:?}",
            x_hat.shape(),
            x_tgt.shape()
        )));
    }
    let mut total = Tensor::scalar(0.0);
    for i in 1..=MEL_SCALES {
        let target = {
            let _g = no_grad();
            log_mel(x_tgt, i, sample_rate)?
        };
        let d = log_mel(x_hat, i, sample_rate)?.sub(&target).abs().mean();
        total = total.add(&d);
    }
    Ok(total)
}

/// Per-example values of [`mel_loss_tensor`] for a batch, without gradients.
pub fn mel_loss_per_example(x_hat: &Tensor, x_tgt: &Tensor, sample_rate: u32) -> Result<Vec<f64>> {
    let _g = no_grad();
    let (b, len) = (x_hat.dim(0), x_hat.dim(1));
    (0..b)
        .map(|i| {
            let a = x_hat.narrow(0, i, 1).reshape(&[1, len]);
            let t = x_tgt.narrow(0, i, 1).reshape(&[1, len]);
            mel_loss_tensor(&a, &t, sample_rate).map(|l| l.item())
        })
        .collect()
}

pub fn mel_loss(x_hat: &AudioBuffer, x_tgt: &AudioBuffer) -> Result<f64> {
    if x_hat.len() != x_tgt.len() {
        return Err(Error::shape(format!(
            "mel loss needs equal lengths, got {} and {}",
            x_hat.len(),
            x_tgt.len()
        )));
    }
    if x_hat.sample_rate() != x_tgt.sample_rate() {
        return Err(Error::invalid("mel loss inputs differ in sample rate"));
    }
    let _g = no_grad();
    let n = x_hat.len();
    let a = Tensor::from_vec(x_hat.samples().to_vec(), &[1, n]);
    let b = Tensor::from_vec(x_tgt.samples().to_vec(), &[1, n]);
    Ok(mel_loss_tensor(&a, &b, x_hat.sample_rate())?.item())
}

/// `mean(relu(1 - D(x))) + mean(relu(1 + D(x̂)))`, averaged over
/// discriminators.
pub fn discriminator_hinge(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::invalid(format!(
            "hinge loss needs matching non-empty score sets, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let mut total = Tensor::scalar(0.0);
    for (r, f) in real.iter().zip(fake) {
        let lr = r.neg().add_scalar(1.0).relu().mean();
        let lf = f.add_scalar(1.0).relu().mean();
        total = total.add(&lr.add(&lf));
    }
    Ok(total.scale(1.0 / real.len() as f64))
}

/// `-mean(D(x̂))`, averaged over discriminators.
pub fn generator_hinge(fake: &[Tensor]) -> Result<Tensor> {
    if fake.is_empty() {
        return Err(Error::invalid("hinge loss needs at least one score map"));
    }
    let mut total = Tensor::scalar(0.0);
    for f in fake {
        total = total.sub(&f.mean());
    }
    Ok(total.scale(1.0 / fake.len() as f64))
}

/// `(L_D, L_G_adv)` from real and fake scores.
pub fn hinge_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(Tensor, Tensor)> {
    Ok((discriminator_hinge(real, fake)?, generator_hinge(fake)?))
}

/// Mean over layers of `mean|f - r| / max(mean|r|, 1e-8)`. Real features
/// are treated as constants.
pub fn feature_matching(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::invalid(format!(
            "{} real and {} fake feature lists",
            real.len(),
            fake.len()
        )));
    }
    let mut total = Tensor::scalar(0.0);
    let mut layers = 0usize;
    for (r, f) in real.iter().zip(fake) {
        if r.len() != f.len() {
            return Err(Error::invalid(format!("{} real and {} fake layers", r.len(), f.len())));
        }
        for (rl, fl) in r.iter().zip(f) {
            if rl.shape() != fl.shape() {
                return Err(Error::shape(format!(
                    "feature shapes differ: {:?} vs {:?}",
                    rl.shape(),
                    fl.shape()
                )));
            }
            let rl = rl.detach();
            let norm = {
                let v = rl.data();
                (v.iter().map(|x| x.abs()).sum::<f64>() / v.len().max(1) as f64).max(FM_NORM_FLOOR)
            };
            total = total.add(&fl.sub(&rl).abs().mean().scale(1.0 / norm));
            layers += 1;
        }
    }
    if layers == 0 {
        return Ok(total);
    }
    Ok(total.scale(1.0 / layers as f64))
}

/// Scores and features of a discriminator pass, split for the loss helpers.
pub fn split_outputs(outs: Vec<DiscOutput>) -> (Vec<Tensor>, Vec<Vec<Tensor>>) {
    outs.into_iter().map(|o| (o.score, o.features)).unzip()
}

/// The five generator-side loss terms.
pub struct LossComponents {
    pub mel: Tensor,
    pub adv: Tensor,
    pub fm: Tensor,
    pub cb: Tensor,
    pub cm: Tensor,
}

pub fn total_generator_loss(c: &LossComponents, w: &LossWeights) -> Tensor {
    c.mel
        .scale(w.mel)
        .add(&c.adv.scale(w.adv))
        .add(&c.fm.scale(w.fm))
        .add(&c.cb.scale(w.cb))
        .add(&c.cm.scale(w.cm))
}
