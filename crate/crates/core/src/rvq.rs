//! Factorized residual vector quantizer.
//!
//! Each stage projects the current residual `F' → N`, picks the nearest of
//! `M` codes (ties to the lowest index), and maps the code back `N → F'`.
//! Index 0 is a reserved null code that contributes nothing; a stage emits it
//! whenever its best code would increase the residual energy of a frame, so
//! the residual norm never grows with the number of active stages.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::ops::GATHER_ZERO;
use crate::tensor::params::Scope;
use crate::tensor::{no_grad, Tensor};

/// Index meaning "no contribution from this stage".
pub const NULL_CODE: u16 = 0;

pub struct RvqStage {
    pub in_proj: Linear,
    /// `[M, N]`; row 0 is the null code and is never read.
    pub codebook: Tensor,
    pub out_proj: Linear,
}

pub struct Rvq {
    pub stages: Vec<RvqStage>,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub input_dim: usize,
}

/// Per-frame indices `[stage][frame]` of one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    pub n_q: usize,
    pub frames: usize,
    pub indices: Vec<u16>,
}

impl CodeGrid {
    pub fn new(n_q: usize, frames: usize, indices: Vec<u16>) -> Result<Self> {
        if indices.len() != n_q * frames {
            return Err(Error::shape(format!(
                "{} indices for a {n_q} x {frames} grid",
                indices.len()
            )));
        }
        Ok(Self { n_q, frames, indices })
    }

    pub fn stage(&self, s: usize) -> &[u16] {
        &self.indices[s * self.frames..(s + 1) * self.frames]
    }
}

pub struct QuantizeOutput {
    /// Dequantized embedding `[B, F', T]`; straight-through to the input.
    pub z_hat: Tensor,
    /// One grid per example, holding that example's active stages.
    pub codes: Vec<CodeGrid>,
    pub codebook_loss: Tensor,
    pub commitment_loss: Tensor,
    /// `||z - z_hat||` per example.
    pub residual_norms: Vec<f64>,
}

impl Rvq {
    pub fn new(scope: &mut Scope<'_>, n_q: usize, input_dim: usize, codebook_size: usize, codebook_dim: usize) -> Self {
        let stages = (0..n_q)
            .map(|s| {
                let mut sc = scope.child(&format!("stage{s}"));
                let in_proj = Linear::pointwise(&mut sc, "in_proj", (input_dim, codebook_dim), false);
                // Small enough that most codes pass the energy gate at init.
                let codebook = sc.trunc_normal("codebook", &[codebook_size, codebook_dim], 0.01);
                codebook.data_mut()[..codebook_dim].iter_mut().for_each(|v| *v = 0.0);
                let out_proj = Linear::pointwise(&mut sc, "out_proj", (codebook_dim, input_dim), false);
                RvqStage {
                    in_proj,
                    codebook,
                    out_proj,
                }
            })
            .collect();
        Self {
            stages,
            codebook_size,
            codebook_dim,
            input_dim,
        }
    }

    pub fn n_q(&self) -> usize {
        self.stages.len()
    }

    /// Gather map reading codebook rows for `[B, N, T]` from per-position
    /// indices laid out `[B][T]`; the null code reads zeros.
    fn code_index(&self, idx: &[u16], batch: usize, frames: usize) -> Rc<Vec<usize>> {
        let n = self.codebook_dim;
        let mut map = vec![GATHER_ZERO; batch * n * frames];
        for b in 0..batch {
            for t in 0..frames {
                let k = idx[b * frames + t];
                if k != NULL_CODE {
                    for j in 0..n {
                        map[(b * n + j) * frames + t] = k as usize * n + j;
                    }
                }
            }
        }
        Rc::new(map)
    }

    /// Nearest non-null code to each column of `e` (`[B, N, T]` values).
    fn nearest(&self, stage: &RvqStage, e: &[f64], batch: usize, frames: usize) -> Vec<u16> {
        let n = self.codebook_dim;
        let cb = stage.codebook.data();
        let mut out = vec![NULL_CODE; batch * frames];
        let mut v = vec![0.0; n];
        for b in 0..batch {
            for t in 0..frames {
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj = e[(b * n + j) * frames + t];
                }
                let mut best = (f64::INFINITY, 1usize);
                for k in 1..self.codebook_size {
                    let row = &cb[k * n..(k + 1) * n];
                    let d: f64 = row.iter().zip(&v).map(|(c, x)| (x - c) * (x - c)).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                out[b * frames + t] = best.1 as u16;
            }
        }
        out
    }

    /// Quantizes `z` (`[B, F', T]`) with the first `n_active[b]` stages for
    /// example `b`.
    pub fn quantize(&self, z: &Tensor, n_active: &[usize]) -> Result<QuantizeOutput> {
        if z.rank() != 3 || z.dim(1) != self.input_dim {
            return Err(Error::shape(format!(
                "quantizer expects [B, {}, T], got {:?}",
                self.input_dim,
                z.shape()
            )));
        }
        let (batch, f, frames) = (z.dim(0), z.dim(1), z.dim(2));
        if n_active.len() != batch {
            return Err(Error::shape(format!("{} stage counts for batch of {batch}", n_active.len())));
        }
        if let Some(&bad) = n_active.iter().find(|&&k| k > self.n_q()) {
            return Err(Error::invalid(format!("n_active {bad} exceeds {} stages", self.n_q())));
        }
        let n = self.codebook_dim;
        let denom = (batch * frames * n).max(1) as f64;
        let mut q = Tensor::zeros(&[batch, f, frames]);
        let mut cb_loss = Tensor::scalar(0.0);
        let mut cm_loss = Tensor::scalar(0.0);
        let mut grids: Vec<Vec<u16>> = vec![Vec::new(); batch];
        let max_active = n_active.iter().copied().max().unwrap_or(0);
        for (s, stage) in self.stages.iter().enumerate().take(max_active) {
            let r = z.sub(&q);
            let e = stage.in_proj.forward(&r);
            let mut idx = self.nearest(stage, &e.data(), batch, frames);
            for (b, &k) in n_active.iter().enumerate() {
                if s >= k {
                    idx[b * frames..(b + 1) * frames].iter_mut().for_each(|i| *i = NULL_CODE);
                }
            }
            // Gate: drop codes that would raise a frame's residual energy.
            {
                let _g = no_grad();
                let trial = stage
                    .out_proj
                    .forward(&stage.codebook.gather(self.code_index(&idx, batch, frames), &[batch, n, frames]));
                let q_try = q.add(&trial);
                let (zv, qv, tv) = (z.data(), q.data(), q_try.data());
                for b in 0..batch {
                    for t in 0..frames {
                        let (mut before, mut after) = (0.0, 0.0);
                        for c in 0..f {
                            let i = (b * f + c) * frames + t;
                            before += (zv[i] - qv[i]) * (zv[i] - qv[i]);
                            after += (zv[i] - tv[i]) * (zv[i] - tv[i]);
                        }
                        if after > before {
                            idx[b * frames + t] = NULL_CODE;
                        }
                    }
                }
            }
            let map = self.code_index(&idx, batch, frames);
            let mask: Vec<f64> = map.iter().map(|&m| if m == GATHER_ZERO { 0.0 } else { 1.0 }).collect();
            let mask = Tensor::from_vec(mask, &[batch, n, frames]);
            let code = stage.codebook.gather(map, &[batch, n, frames]);
            let code_val = code.detach();
            let chosen = e.straight_through(code_val.to_vec()).mul(&mask);
            q = q.add(&stage.out_proj.forward(&chosen));
            cm_loss = cm_loss.add(&e.sub(&code_val).square().mul(&mask).sum().scale(1.0 / denom));
            cb_loss = cb_loss.add(&e.detach().sub(&code).square().mul(&mask).sum().scale(1.0 / denom));
            for (b, &k) in n_active.iter().enumerate() {
                if s < k {
                    grids[b].extend_from_slice(&idx[b * frames..(b + 1) * frames]);
                }
            }
        }
        let residual_norms = {
            let (zv, qv) = (z.data(), q.data());
            (0..batch)
                .map(|b| {
                    let r = b * f * frames..(b + 1) * f * frames;
                    zv[r.clone()].iter().zip(&qv[r]).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()
                })
                .collect()
        };
        let codes = grids
            .into_iter()
            .zip(n_active)
            .map(|(g, &k)| CodeGrid::new(k, frames, g))
            .collect::<Result<_>>()?;
        Ok(QuantizeOutput {
            z_hat: q,
            codes,
            codebook_loss: cb_loss,
            commitment_loss: cm_loss,
            residual_norms,
        })
    }

    /// Reconstructs `[1, F', T]` from one example's codes.
    pub fn dequantize(&self, codes: &CodeGrid) -> Result<Tensor> {
        if codes.n_q > self.n_q() {
            return Err(Error::invalid(format!(
                "{} stages of codes for a {}-stage quantizer",
                codes.n_q,
                self.n_q()
            )));
        }
        if let Some(&bad) = codes.indices.iter().find(|&&i| i as usize >= self.codebook_size) {
            return Err(Error::invalid(format!("code index {bad} out of range")));
        }
        let frames = codes.frames;
        let n = self.codebook_dim;
        let mut q = Tensor::zeros(&[1, self.input_dim, frames]);
        for (s, stage) in self.stages.iter().enumerate().take(codes.n_q) {
            let code = stage
                .codebook
                .gather(self.code_index(codes.stage(s), 1, frames), &[1, n, frames]);
            q = q.add(&stage.out_proj.forward(&code));
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(n_q: usize, seed: u64) -> (ParamStore, Rvq) {
        let mut store = ParamStore::new(seed);
        let rvq = Rvq::new(&mut store.scope("rvq"), n_q, 16, 32, 4);
        (store, rvq)
    }

    fn random_z(batch: usize, frames: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec((0..batch * 16 * frames).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[batch, 16, frames])
    }

    #[test]
    fn zero_stages_bypass() {
        let (_s, rvq) = build(3, 0);
        let out = rvq.quantize(&random_z(2, 5, 1), &[0, 0]).unwrap();
        assert!(out.z_hat.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.codebook_loss.item(), 0.0);
        assert_eq!(out.commitment_loss.item(), 0.0);
        assert!(out.codes.iter().all(|c| c.indices.is_empty()));
    }

    #[test]
    fn too_many_stages_errors() {
        let (_s, rvq) = build(3, 0);
        assert!(rvq.quantize(&random_z(1, 5, 1), &[4]).is_err());
    }

    #[test]
    fn dequantize_matches_quantizer_output() {
        let (_s, rvq) = build(4, 2);
        let z = random_z(1, 7, 3);
        let out = rvq.quantize(&z, &[4]).unwrap();
        assert!(out.codes[0].indices.iter().any(|&i| i != NULL_CODE));
        let dq = rvq.dequantize(&out.codes[0]).unwrap();
        assert_eq!(dq.to_vec(), out.z_hat.to_vec());
    }

    #[test]
    fn single_stage_code_maps_through_out_projection() {
        let (_s, rvq) = build(1, 5);
        let k = 3u16;
        let grid = CodeGrid::new(1, 1, vec![k]).unwrap();
        let dq = rvq.dequantize(&grid).unwrap().to_vec();
        let st = &rvq.stages[0];
        let cb = st.codebook.data();
        let w = st.out_proj.weight.data();
        for f in 0..16 {
            let expect: f64 = (0..4).map(|j| w[f * 4 + j] * cb[k as usize * 4 + j]).sum();
            assert!((dq[f] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        let (_s, rvq) = build(1, 0);
        let st = &rvq.stages[0];
        {
            let mut cb = st.codebook.data_mut();
            cb.iter_mut().for_each(|v| *v = 5.0);
            cb[4..8].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            cb[8..12].copy_from_slice(&[-1.0, 0.0, 0.0, 0.0]);
        }
        let idx = rvq.nearest(st, &[0.0, 0.0, 0.0, 0.0], 1, 1);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn out_of_range_index_errors() {
        let (_s, rvq) = build(1, 0);
        assert!(rvq.dequantize(&CodeGrid::new(1, 1, vec![32]).unwrap()).is_err());
        assert!(rvq.dequantize(&CodeGrid::new(2, 1, vec![1, 1]).unwrap()).is_err());
    }

    #[test]
    fn gradients_reach_encoder_input_and_codebook() {
        let (store, rvq) = build(2, 4);
        let z = Tensor::param(random_z(1, 3, 9).to_vec(), &[1, 16, 3]);
        let out = rvq.quantize(&z, &[2]).unwrap();
        out.z_hat.sum().add(&out.codebook_loss).add(&out.commitment_loss).backward().unwrap();
        assert!(z.grad().is_some());
        assert!(store.get("rvq.stage0.codebook").unwrap().grad().is_some());
    }
}
