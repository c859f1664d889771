//! Named parameter registry with seeded initializers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

/// Every trainable tensor of a model, in creation order, under dotted names.
pub struct ParamStore {
    params: Vec<(String, Tensor)>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn scope(&mut self, prefix: &str) -> Scope<'_> {
        Scope {
            store: self,
            prefix: prefix.to_string(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Vec<Tensor> {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Overwrites every parameter from `(name, shape, values)` records. All
    /// names must match exactly in both directions.
    pub fn load(&self, records: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, shape, values) in records {
            let t = self
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unexpected tensor `{name}` in checkpoint")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor `{name}` has shape {shape:?} in checkpoint, {:?} in model",
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }

    fn push(&mut self, name: String, t: Tensor) -> Tensor {
        assert!(self.get(&name).is_none(), "duplicate parameter name {name}");
        self.params.push((name, t.clone()));
        t
    }
}

/// A name prefix inside a [`ParamStore`].
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn child(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: format!("{}.{name}", self.prefix),
            store: &mut *self.store,
        }
    }

    fn full(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    fn make(&mut self, name: &str, shape: &[usize], sample: impl FnMut(&mut ChaCha8Rng) -> f64) -> Tensor {
        let mut sample = sample;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| sample(&mut self.store.rng)).collect();
        let full = self.full(name);
        self.store.push(full, Tensor::param(data, shape))
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Tensor {
        self.make(name, shape, |r| if bound > 0.0 { r.gen_range(-bound..bound) } else { 0.0 })
    }

    /// Normal with standard deviation `std`, resampled outside `±2 std`.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        self.make(name, shape, |r| loop {
            let v: f64 = dist.sample(r);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Tensor {
        self.make(name, shape, |_| 0.0)
    }
}
