//! Trainable layers built on the tensor engine.

use crate::error::{Error, Result};
use crate::tensor::conv::{conv1d, conv2d, conv_transpose1d, Conv1dSpec, Conv2dSpec};
use crate::tensor::params::Scope;
use crate::tensor::Tensor;

/// Negative slope of the leaky ReLU used outside the feature encoder.
pub const LEAKY_SLOPE: f64 = 0.2;

pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: Conv1dSpec,
}

impl Conv1d {
    /// Causal convolution with Kaiming-uniform weights scaled by `gain`.
    pub fn causal(
        scope: &mut Scope<'_>,
        name: &str,
        (cin, cout, kernel): (usize, usize, usize),
        stride: usize,
        dilation: usize,
        gain: f64,
    ) -> Self {
        Self::with_spec(scope, name, (cin, cout, kernel), Conv1dSpec::causal(kernel, stride, dilation), gain)
    }

    pub fn with_spec(
        scope: &mut Scope<'_>,
        name: &str,
        (cin, cout, kernel): (usize, usize, usize),
        spec: Conv1dSpec,
        gain: f64,
    ) -> Self {
        let mut s = scope.child(name);
        let bound = gain * (6.0 / (cin * kernel) as f64).sqrt();
        let weight = s.uniform("weight", &[cout, cin, kernel], bound);
        let bias = s.zeros("bias", &[cout]);
        Self { weight, bias, spec }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv1d(x, &self.weight, Some(&self.bias), self.spec)
    }
}

pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    /// Frequency-"same", time-causal 2D convolution.
    pub fn new(
        scope: &mut Scope<'_>,
        name: &str,
        (cin, cout): (usize, usize),
        (kf, kt): (usize, usize),
        (sf, st): (usize, usize),
        gain: f64,
    ) -> Self {
        Self::with_spec(scope, name, (cin, cout), (kf, kt), Conv2dSpec::same_f_causal_t(kf, kt, sf, st), gain)
    }

    pub fn with_spec(
        scope: &mut Scope<'_>,
        name: &str,
        (cin, cout): (usize, usize),
        (kf, kt): (usize, usize),
        spec: Conv2dSpec,
        gain: f64,
    ) -> Self {
        let mut s = scope.child(name);
        let bound = gain * (6.0 / (cin * kf * kt) as f64).sqrt();
        let weight = s.uniform("weight", &[cout, cin, kf, kt], bound);
        let bias = s.zeros("bias", &[cout]);
        Self { weight, bias, spec }
    }

    /// Frequency extent must divide by the frequency stride.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.dim(2) % self.spec.stride_f != 0 {
            return Err(Error::shape(format!(
                "frequency extent {} not divisible by stride {}",
                x.dim(2),
                self.spec.stride_f
            )));
        }
        Ok(self.apply(x))
    }

    /// Forward pass without the divisibility check; odd extents round down.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        conv2d(x, &self.weight, Some(&self.bias), self.spec)
    }
}

pub struct ConvTranspose1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvTranspose1d {
    /// Kernel `2 * stride`, causal trimming.
    pub fn new(scope: &mut Scope<'_>, name: &str, (cin, cout): (usize, usize), stride: usize) -> Self {
        let kernel = 2 * stride;
        let mut s = scope.child(name);
        let weight = s.kaiming_uniform("weight", &[cin, cout, kernel], cin * kernel / stride);
        let bias = s.zeros("bias", &[cout]);
        Self { weight, bias, stride }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv_transpose1d(x, &self.weight, Some(&self.bias), self.stride)
    }
}

/// Pointwise linear map over the channel axis of `[B, C, T]` or
/// `[B, C, F, T]` activations.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Truncated-normal (std 0.02) weights, zero bias.
    pub fn new(scope: &mut Scope<'_>, name: &str, (cin, cout): (usize, usize), bias: bool) -> Self {
        let mut s = scope.child(name);
        let weight = s.trunc_normal("weight", &[cout, cin, 1], 0.02);
        let bias = bias.then(|| s.zeros("bias", &[cout]));
        Self { weight, bias }
    }

    /// Kernel-1 convolution init: uniform in `±1/sqrt(cin)`, zero bias.
    pub fn pointwise(scope: &mut Scope<'_>, name: &str, (cin, cout): (usize, usize), bias: bool) -> Self {
        let mut s = scope.child(name);
        let weight = s.uniform("weight", &[cout, cin, 1], 1.0 / (cin.max(1) as f64).sqrt());
        let bias = bias.then(|| s.zeros("bias", &[cout]));
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match x.rank() {
            3 => conv1d(x, &self.weight, self.bias.as_ref(), Conv1dSpec::causal(1, 1, 1)),
            4 => {
                let (cout, cin) = (self.weight.dim(0), self.weight.dim(1));
                let w = self.weight.reshape(&[cout, cin, 1, 1]);
                conv2d(x, &w, self.bias.as_ref(), Conv2dSpec::same_f_causal_t(1, 1, 1, 1))
            }
            r => panic!("linear expects rank 3 or 4, got {r}"),
        }
    }

    pub fn zero(&self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = &self.bias {
            b.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Temporal FiLM: per-timestep `γ ⊙ a + β` from a conditioning sequence `b`.
///
/// `b` is first brought to the time rate of `a`: by a strided convolution
/// when it is faster (fixed ratio, known at construction), or by repeating
/// each step when it is slower. A pointwise projection then maps `C_b` to
/// `2 C_a` channels split into `γ - 1` and `β`, so a zeroed projection is the
/// identity.
pub struct Tfilm {
    pub down: Option<(Conv1d, usize)>,
    pub proj: Linear,
    pub channels: usize,
}

impl Tfilm {
    pub fn new(scope: &mut Scope<'_>, name: &str, (c_a, c_b): (usize, usize), downsample: Option<usize>) -> Self {
        let mut s = scope.child(name);
        let down = downsample.map(|r| {
            // Receptive field of output step t ends at input step t*r + r - 1,
            // i.e. at the end of the block it summarizes.
            let spec = Conv1dSpec {
                stride: r,
                dilation: 1,
                pad_left: r,
                pad_right: 0,
            };
            (Conv1d::with_spec(&mut s, "down", (c_b, c_b, 2 * r), spec, 1.0), r)
        });
        let proj = Linear::new(&mut s, "proj", (c_b, 2 * c_a), true);
        Self {
            down,
            proj,
            channels: c_a,
        }
    }

    /// `(γ, β)` at the time rate `t_a`, each `[B, C_a, T_a]`.
    pub fn params(&self, b: &Tensor, t_a: usize) -> Result<(Tensor, Tensor)> {
        let t_b = b.dim(2);
        let mod_ = match &self.down {
            Some((conv, r)) => {
                if t_b != r * t_a {
                    return Err(Error::shape(format!(
                        "tfilm expects conditioning at {r}x the rate: {t_b} vs {t_a}"
                    )));
                }
                self.proj.forward(&conv.forward(b))
            }
            None => {
                if t_b == 0 || t_a % t_b != 0 {
                    return Err(Error::shape(format!(
                        "tfilm replication needs an integral ratio: {t_a} / {t_b}"
                    )));
                }
                let p = self.proj.forward(b);
                if t_a == t_b {
                    p
                } else {
                    p.repeat_time(t_a / t_b)
                }
            }
        };
        let c = self.channels;
        Ok((mod_.narrow(1, 0, c).add_scalar(1.0), mod_.narrow(1, c, c)))
    }

    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dim(1) != self.channels {
            return Err(Error::shape(format!(
                "tfilm built for {} channels, activation has {}",
                self.channels,
                a.dim(1)
            )));
        }
        let (g, beta) = self.params(b, a.dim(a.rank() - 1))?;
        Ok(a.film(&g, &beta))
    }
}
