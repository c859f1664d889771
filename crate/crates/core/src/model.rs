//! The trainable generator: feature encoder, quantizer, embedding extractor
//! and band generator sharing one parameter store.

use std::path::Path;
use std::sync::Arc;

use crate::config::SbgConfig;
use crate::decoder::{assemble_fullband_tensor, BandGenerator, EmbeddingExtractor};
use crate::dsp::pqmf::{design_pqmf, PqmfBank};
use crate::encoder::{slab_batch, FeatureEncoder};
use crate::error::{Error, Result};
use crate::rvq::{CodeGrid, Rvq};
use crate::tensor::checkpoint;
use crate::tensor::params::ParamStore;
use crate::tensor::signal::pqmf_analyze;
use crate::tensor::Tensor;

pub struct SbgModel {
    pub cfg: SbgConfig,
    pub store: ParamStore,
    pub encoder: FeatureEncoder,
    pub rvq: Rvq,
    pub extractor: EmbeddingExtractor,
    pub generator: BandGenerator,
    pub bank: Arc<PqmfBank>,
}

/// Everything one generator pass produces.
pub struct GeneratorOutput {
    /// Bandwidth-extended signal `[B, L]`.
    pub x_hat: Tensor,
    /// Generated subbands `[B, N_HF, L / K]`.
    pub bands: Tensor,
    /// Continuous side information `[B, F', T]` before quantization.
    pub z: Tensor,
    pub z_hat: Tensor,
    pub h: Tensor,
    pub codes: Vec<CodeGrid>,
    pub codebook_loss: Tensor,
    pub commitment_loss: Tensor,
}

impl SbgModel {
    pub fn new(cfg: &SbgConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bank = Arc::new(design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps_per_band, cfg.pqmf_stopband_db)?);
        let mut store = ParamStore::new(seed);
        let extractor = EmbeddingExtractor::new(&mut store.scope("decoder.extractor"), cfg);
        let generator = BandGenerator::new(&mut store.scope("decoder.generator"), cfg);
        let encoder = FeatureEncoder::new(&mut store.scope("encoder.features"), cfg);
        let rvq = Rvq::new(
            &mut store.scope("encoder.rvq"),
            cfg.n_q,
            cfg.slab_bins(),
            cfg.codebook_size,
            cfg.codebook_dim,
        );
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            rvq,
            extractor,
            generator,
            bank,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Builds a model for `cfg` and loads weights; names and shapes must
    /// match the configuration.
    pub fn load(cfg: &SbgConfig, path: impl AsRef<Path>) -> Result<Self> {
        let model = Self::new(cfg, 0)?;
        checkpoint::load(&model.store, path)?;
        Ok(model)
    }

    /// Core subbands `[B, N_core, L / K]` of `[B, L]` core audio.
    pub fn core_bands(&self, x_core: &Tensor) -> Tensor {
        pqmf_analyze(x_core, &self.bank).narrow(1, 0, self.cfg.n_core)
    }

    fn check_len(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.dim(1) == 0 || x.dim(1) % self.cfg.block_len() != 0 {
            return Err(Error::shape(format!(
                "model expects [B, L] with L a positive multiple of {}, got {:?}",
                self.cfg.block_len(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Full generator pass on input `x` and core output `x_core`, both
    /// `[B, L]`, using the first `n_active[b]` quantizer stages per example.
    pub fn forward(&self, x: &Tensor, x_core: &Tensor, n_active: &[usize]) -> Result<GeneratorOutput> {
        self.check_len(x)?;
        if x.shape() != x_core.shape() {
            return Err(Error::shape(format!(
                "input {:?} and core output {:?} differ",
                x.shape(),
                x_core.shape()
            )));
        }
        let core = self.core_bands(x_core);
        let emb = self.extractor.forward(&core)?;
        let slab = slab_batch(x, &self.cfg)?;
        let z = self.encoder.project_reshape(&self.encoder.forward(&slab, &emb.h)?);
        let q = self.rvq.quantize(&z, n_active)?;
        let bands = self.generator.forward(&emb.h, Some(&emb.skips), &q.z_hat)?;
        let x_hat = assemble_fullband_tensor(&core, &bands, self.bank.clone())?;
        Ok(GeneratorOutput {
            x_hat,
            bands,
            z,
            z_hat: q.z_hat,
            h: emb.h,
            codes: q.codes,
            codebook_loss: q.codebook_loss,
            commitment_loss: q.commitment_loss,
        })
    }

    /// Decoder-side pass from transmitted codes for one example.
    pub fn synthesize(&self, x_core: &Tensor, codes: &CodeGrid) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_len(x_core)?;
        let core = self.core_bands(x_core);
        let emb = self.extractor.forward(&core)?;
        let z_hat = self.rvq.dequantize(codes)?;
        let bands = self.generator.forward(&emb.h, Some(&emb.skips), &z_hat)?;
        let x_hat = assemble_fullband_tensor(&core, &bands, self.bank.clone())?;
        Ok((x_hat, emb.h, z_hat))
    }

    /// Training target `[B, L]`: core bands of `x_core`, the next `N_HF`
    /// bands of `x`, zeros above, recombined.
    pub fn target(&self, x: &Tensor, x_core: &Tensor) -> Result<Tensor> {
        if x.shape() != x_core.shape() {
            return Err(Error::shape("input and core output differ in shape"));
        }
        let c = &self.cfg;
        let hf = pqmf_analyze(x, &self.bank).narrow(1, c.n_core, c.n_hf);
        assemble_fullband_tensor(&self.core_bands(x_core), &hf, self.bank.clone())
    }
}
