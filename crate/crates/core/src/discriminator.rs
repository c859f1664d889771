//! Multi-band STFT and multi-period waveform discriminators.

use crate::config::DiscConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, LEAKY_SLOPE};
use crate::tensor::conv::Conv2dSpec;
use crate::tensor::params::Scope;
use crate::tensor::signal::stft_complex;
use crate::tensor::Tensor;

/// Score map and intermediate activations of one discriminator.
pub struct DiscOutput {
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

fn run_stack(convs: &[Conv2d], x: &Tensor, features: &mut Vec<Tensor>) -> Tensor {
    let mut x = x.clone();
    for c in convs {
        x = c.apply(&x).leaky_relu(LEAKY_SLOPE);
        features.push(x.clone());
    }
    x
}

/// Complex spectrogram at one resolution, split into three frequency bands
/// with a separate 2D stack each; band outputs are joined along frequency
/// before the score layer.
pub struct StftDiscriminator {
    window: usize,
    bands: Vec<Vec<Conv2d>>,
    post: Conv2d,
}

impl StftDiscriminator {
    pub fn new(scope: &mut Scope<'_>, name: &str, window: usize, channels: usize) -> Self {
        let mut s = scope.child(name);
        let bands = (0..3)
            .map(|b| {
                let mut bs = s.child(&format!("band{b}"));
                let mut convs = vec![Conv2d::new(&mut bs, "conv0", (2, channels), (9, 3), (1, 1), 1.0)];
                for i in 1..4 {
                    convs.push(Conv2d::new(&mut bs, &format!("conv{i}"), (channels, channels), (9, 3), (2, 1), 1.0));
                }
                convs.push(Conv2d::new(&mut bs, "conv4", (channels, channels), (3, 3), (1, 1), 1.0));
                convs
            })
            .collect();
        let post = Conv2d::new(&mut s, "post", (channels, 1), (3, 3), (1, 1), 1.0);
        Self { window, bands, post }
    }

    /// Frequency ranges `[0, F/4)`, `[F/4, F/2)`, `[F/2, F)` of `F` bins.
    pub fn band_edges(bins: usize) -> [(usize, usize); 3] {
        [(0, bins / 4), (bins / 4, bins / 2), (bins / 2, bins)]
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        if x.dim(1) < self.window {
            return Err(Error::invalid(format!(
                "segment of {} samples is shorter than the {}-sample window",
                x.dim(1),
                self.window
            )));
        }
        // Scaled so white noise keeps its variance per bin.
        let norm = (3.0 * self.window as f64 / 8.0).sqrt().recip();
        let spec = stft_complex(x, self.window, self.window / 4)?.scale(norm);
        let mut features = Vec::new();
        let outs: Vec<Tensor> = Self::band_edges(spec.dim(2))
            .iter()
            .zip(&self.bands)
            .map(|(&(lo, hi), convs)| run_stack(convs, &spec.narrow(2, lo, hi - lo), &mut features))
            .collect();
        let score = self.post.apply(&Tensor::concat(&outs, 2));
        Ok(DiscOutput { score, features })
    }
}

/// Waveform folded into `[B, 1, L / p, p]` columns of period `p`.
pub struct PeriodDiscriminator {
    period: usize,
    convs: Vec<Conv2d>,
    post: Conv2d,
}

impl PeriodDiscriminator {
    pub fn new(scope: &mut Scope<'_>, name: &str, period: usize, channels: usize, max_channels: usize) -> Self {
        let mut s = scope.child(name);
        let spec = |stride| Conv2dSpec {
            stride_f: stride,
            stride_t: 1,
            pad_f: (2, 2),
            pad_t: 0,
        };
        let mut convs = Vec::new();
        let mut cin = 1;
        for i in 0..4 {
            let cout = (channels << (2 * i)).min(max_channels);
            convs.push(Conv2d::with_spec(&mut s, &format!("conv{i}"), (cin, cout), (5, 1), spec(3), 1.0));
            cin = cout;
        }
        convs.push(Conv2d::with_spec(&mut s, "conv4", (cin, cin), (5, 1), spec(1), 1.0));
        let post = Conv2d::with_spec(
            &mut s,
            "post",
            (cin, 1),
            (3, 1),
            Conv2dSpec {
                stride_f: 1,
                stride_t: 1,
                pad_f: (1, 1),
                pad_t: 0,
            },
            1.0,
        );
        Self { period, convs, post }
    }

    /// Zero-pads `[B, L]` to a multiple of the period and folds it.
    pub fn fold(&self, x: &Tensor) -> Tensor {
        let (b, len) = (x.dim(0), x.dim(1));
        let p = self.period;
        let padded = len.div_ceil(p) * p;
        let x = if padded == len {
            x.clone()
        } else {
            Tensor::concat(&[x.clone(), Tensor::zeros(&[b, padded - len])], 1)
        };
        x.reshape(&[b, 1, padded / p, p])
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut features = Vec::new();
        let y = run_stack(&self.convs, &self.fold(x), &mut features);
        let score = self.post.apply(&y);
        Ok(DiscOutput { score, features })
    }
}

pub struct DiscriminatorSet {
    pub stft: Vec<StftDiscriminator>,
    pub periods: Vec<PeriodDiscriminator>,
    pub crop: usize,
}

impl DiscriminatorSet {
    pub fn new(scope: &mut Scope<'_>, cfg: &DiscConfig) -> Self {
        let stft = cfg
            .stft_windows
            .iter()
            .map(|&w| StftDiscriminator::new(scope, &format!("stft{w}"), w, cfg.channels))
            .collect();
        let periods = cfg
            .periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(scope, &format!("period{p}"), p, cfg.channels, cfg.max_channels))
            .collect();
        Self {
            stft,
            periods,
            crop: cfg.crop,
        }
    }

    pub fn len(&self) -> usize {
        self.stft.len() + self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs every discriminator on the first `crop` samples of `[B, L]`.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<DiscOutput>> {
        if x.rank() != 2 {
            return Err(Error::shape(format!("discriminators expect [B, L], got {:?}", x.shape())));
        }
        let x = if x.dim(1) > self.crop {
            x.narrow(1, 0, self.crop)
        } else {
            x.clone()
        };
        let mut out = Vec::with_capacity(self.len());
        for d in &self.stft {
            out.push(d.forward(&x)?);
        }
        for d in &self.periods {
            out.push(d.forward(&x)?);
        }
        Ok(out)
    }
}
