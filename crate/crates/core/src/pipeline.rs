//! Whole-utterance encode and decode around a core codec.

use crate::audio::AudioBuffer;
use crate::bitstream::{Header, SbgBitstream};
use crate::config::SbgConfig;
use crate::core_codec::CoreCodec;
use crate::dsp::pqmf::{pqmf_analysis, PqmfBank};
use crate::error::{Error, Result};
use crate::model::SbgModel;
use crate::tensor::{no_grad, Tensor};

/// Core payload and side-information stream for one utterance.
pub struct Encoded {
    pub core_payload: Vec<u8>,
    pub bitstream: SbgBitstream,
}

/// Intermediate values exposed for consistency checks.
pub struct Trace {
    pub h: Vec<f64>,
    pub z_hat: Vec<f64>,
}

fn padded_row(x: &AudioBuffer, block: usize) -> Tensor {
    let p = x.padded_to_multiple(block);
    let n = p.len();
    Tensor::from_vec(p.into_samples(), &[1, n])
}

/// Training/evaluation target: the core output's lowest `N_core` bands, the
/// input's next `N_HF` bands, zeros above.
pub fn build_target(x: &AudioBuffer, x_core: &AudioBuffer, cfg: &SbgConfig, bank: &PqmfBank) -> Result<AudioBuffer> {
    if x.len() != x_core.len() {
        return Err(Error::shape(format!(
            "input has {} samples, core output {}",
            x.len(),
            x_core.len()
        )));
    }
    if cfg.n_core + cfg.n_hf > bank.num_bands() {
        return Err(Error::invalid("band split exceeds the filterbank"));
    }
    let a = pqmf_analysis(x, bank);
    let c = pqmf_analysis(x_core, bank);
    let len = a.len;
    let mut bands = vec![0.0; bank.num_bands() * len];
    bands[..cfg.n_core * len].copy_from_slice(&c.bands[..cfg.n_core * len]);
    let hf = cfg.n_core * len..(cfg.n_core + cfg.n_hf) * len;
    bands[hf.clone()].copy_from_slice(&a.bands[hf]);
    let y = bank.synthesize_raw(&bands, len);
    Ok(AudioBuffer::new(y, x.sample_rate())?.truncated(x.len()))
}

pub fn encode(x: &AudioBuffer, core: &dyn CoreCodec, model: &SbgModel, n_active: usize) -> Result<Encoded> {
    encode_traced(x, core, model, n_active).map(|(e, _)| e)
}

/// Encodes with the first `n_active` quantizer stages.
pub fn encode_traced(
    x: &AudioBuffer,
    core: &dyn CoreCodec,
    model: &SbgModel,
    n_active: usize,
) -> Result<(Encoded, Trace)> {
    let cfg = &model.cfg;
    x.require_rate(cfg.sample_rate)?;
    if x.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    if n_active > cfg.n_q {
        return Err(Error::invalid(format!("{n_active} stages requested, model has {}", cfg.n_q)));
    }
    let core_payload = core.encode(x)?;
    let x_core = core.decode(&core_payload)?;
    if x_core.len() != x.len() {
        return Err(Error::shape(format!(
            "core returned {} samples for {}",
            x_core.len(),
            x.len()
        )));
    }
    let _g = no_grad();
    let xt = padded_row(x, cfg.block_len());
    let ct = padded_row(&x_core, cfg.block_len());
    let out = model.forward(&xt, &ct, &[n_active])?;
    let codes = out.codes.into_iter().next().expect("batch of one");
    let header = Header::for_config(cfg, n_active, codes.frames)?;
    let bitstream = SbgBitstream::new(header, codes)?;
    let trace = Trace {
        h: out.h.to_vec(),
        z_hat: out.z_hat.to_vec(),
    };
    Ok((
        Encoded {
            core_payload,
            bitstream,
        },
        trace,
    ))
}

pub fn decode(core_payload: &[u8], bs: &SbgBitstream, core: &dyn CoreCodec, model: &SbgModel) -> Result<AudioBuffer> {
    decode_traced(core_payload, bs, core, model).map(|(a, _)| a)
}

pub fn decode_traced(
    core_payload: &[u8],
    bs: &SbgBitstream,
    core: &dyn CoreCodec,
    model: &SbgModel,
) -> Result<(AudioBuffer, Trace)> {
    model.cfg.validate()?;
    bs.header.check_config(&model.cfg)?;
    let x_core = core.decode(core_payload)?;
    decode_core_audio(&x_core, bs, model)
}

/// Decoder side starting from already decoded core audio.
pub fn decode_core_audio(x_core: &AudioBuffer, bs: &SbgBitstream, model: &SbgModel) -> Result<(AudioBuffer, Trace)> {
    let cfg = &model.cfg;
    bs.header.check_config(cfg)?;
    x_core.require_rate(cfg.sample_rate)?;
    let frames = x_core.len().div_ceil(cfg.hop);
    if frames != bs.codes.frames {
        return Err(Error::ConfigMismatch(format!(
            "core output spans {frames} frames, side information {}",
            bs.codes.frames
        )));
    }
    let _g = no_grad();
    let ct = padded_row(x_core, cfg.block_len());
    let (x_hat, h, z_hat) = model.synthesize(&ct, &bs.codes)?;
    if !x_hat.all_finite() {
        return Err(Error::NonFinite("decoded audio".into()));
    }
    let y = AudioBuffer::new(x_hat.to_vec(), cfg.sample_rate)?.truncated(x_core.len());
    Ok((
        y,
        Trace {
            h: h.to_vec(),
            z_hat: z_hat.to_vec(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_codec::SurrogateCore;

    fn signal(len: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|i| 0.2 * (i as f64 * 0.01).sin() + 0.05 * (i as f64 * 1.3).sin())
                .collect(),
            48_000,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_keeps_length_and_shared_state() {
        let cfg = SbgConfig::desk();
        let model = SbgModel::new(&cfg, 7).unwrap();
        let core = SurrogateCore::new(model.bank.clone(), 5, 8).unwrap();
        let x = signal(5000);
        let (enc, te) = encode_traced(&x, &core, &model, 11).unwrap();
        assert_eq!(enc.bitstream.codes.frames, 3);
        let bs = SbgBitstream::from_bytes(&enc.bitstream.to_bytes()).unwrap();
        let (y, td) = decode_traced(&enc.core_payload, &bs, &core, &model).unwrap();
        assert_eq!(y.len(), 5000);
        assert_eq!(te.h, td.h);
        assert_eq!(te.z_hat, td.z_hat);
    }

    #[test]
    fn target_with_silent_input_is_band_limited_core() {
        let cfg = SbgConfig::desk();
        let bank = crate::dsp::pqmf::default_bank();
        let xc = signal(2048);
        let t = build_target(&AudioBuffer::zeros(2048, 48_000), &xc, &cfg, &bank).unwrap();
        let mut sub = pqmf_analysis(&xc, &bank);
        sub.bands[cfg.n_core * sub.len..].iter_mut().for_each(|v| *v = 0.0);
        let expect = crate::dsp::pqmf::pqmf_synthesis(&sub, &bank).unwrap();
        assert_eq!(t.samples(), expect.samples());
        assert!(build_target(&AudioBuffer::zeros(10, 48_000), &xc, &cfg, &bank).is_err());
    }

    #[test]
    fn decode_rejects_mismatched_stream() {
        let cfg = SbgConfig::desk();
        let model = SbgModel::new(&cfg, 7).unwrap();
        let core = SurrogateCore::new(model.bank.clone(), 5, 8).unwrap();
        let enc = encode(&signal(4096), &core, &model, 3).unwrap();
        let other = SbgModel::new(
            &SbgConfig {
                n_hf: 11,
                n_q: 13,
                ..cfg
            },
            7,
        )
        .unwrap();
        assert!(matches!(
            decode(&enc.core_payload, &enc.bitstream, &core, &other),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
