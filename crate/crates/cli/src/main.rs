//! `nsbg`: encode, decode, train, evaluate and inspect.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nsbg::audio::{read_wav, read_wav_bytes, write_wav, WavFormat};
use nsbg::bitstream::SbgBitstream;
use nsbg::config::{CoreKind, SbgConfig};
use nsbg::core_codec::{core_from_config, CoreCodec};
use nsbg::dataset::Dataset;
use nsbg::dsp::pqmf::design_pqmf;
use nsbg::metrics::{evaluate, SideInfoRate};
use nsbg::model::SbgModel;
use nsbg::pipeline;
use nsbg::synth::synth_corpus;
use nsbg::tensor::checkpoint;
use nsbg::trainer::{TrainConfig, Trainer};
use nsbg::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "nsbg", version, about = "High-band coding on top of a core audio codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a 48 kHz mono WAV into a core payload and a side-information stream.
    Encode(EncodeArgs),
    /// Decode a core payload (or decoded core WAV) plus a side-information stream.
    Decode(DecodeArgs),
    /// Train a model on a directory of WAV files or on synthetic audio.
    Train(TrainArgs),
    /// Compare a decoded signal against a reference.
    Eval(EvalArgs),
    /// Describe a bitstream, checkpoint or WAV file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Preset name (full_12kbps, full_16kbps, desk) or TOML file.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Generator checkpoint; a seeded untrained model is used when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the core codec kind of the configuration.
    #[arg(long, value_enum)]
    core: Option<CoreArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoreArg {
    Surrogate,
    External,
}

#[derive(Args)]
struct EncodeArgs {
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Active quantizer stages; defaults to all.
    #[arg(long)]
    nq: Option<usize>,
    /// Side-information stream to write.
    #[arg(long)]
    out: PathBuf,
    /// Core payload to write; defaults to `<out>.core`.
    #[arg(long)]
    core_out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Core payload, or a WAV holding already decoded core audio.
    core_input: PathBuf,
    stream: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of 48 kHz mono WAV files.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Seconds of synthetic audio to train on instead of `--data`.
    #[arg(long)]
    synthetic: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 32_768)]
    segment: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output directory for checkpoints, `losses.csv` and `config.toml`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    reference: PathBuf,
    test: PathBuf,
    /// Preset name or TOML file.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Leading samples of the test signal to drop.
    #[arg(long, default_value_t = 0)]
    delay: usize,
    /// Side-information stream whose rate is added to the report.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Report file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NSBG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::PqmfDesign { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn load_config(spec: &str) -> nsbg::Result<SbgConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        SbgConfig::load(path)
    } else {
        SbgConfig::preset(spec)
    }
}

impl ModelArgs {
    fn config(&self) -> nsbg::Result<SbgConfig> {
        let mut cfg = load_config(&self.config)?;
        match self.core {
            Some(CoreArg::Surrogate) => cfg.core.kind = CoreKind::Surrogate,
            Some(CoreArg::External) => cfg.core.kind = CoreKind::External,
            None => {}
        }
        Ok(cfg)
    }

    fn build(&self) -> nsbg::Result<(SbgModel, Box<dyn CoreCodec>)> {
        let cfg = self.config()?;
        let model = match &self.model {
            Some(p) => SbgModel::load(&cfg, p)?,
            None => {
                log::warn!("no --model given, using untrained weights (seed {})", self.seed);
                SbgModel::new(&cfg, self.seed)?
            }
        };
        let core = core_from_config(&cfg.core, model.bank.clone())?;
        Ok((model, core))
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn cmd_encode(a: EncodeArgs) -> nsbg::Result<()> {
    let x = read_wav(&a.input)?;
    let (model, core) = a.model.build()?;
    let nq = a.nq.unwrap_or(model.cfg.n_q);
    let enc = pipeline::encode(&x, core.as_ref(), &model, nq)?;
    let core_out = a.core_out.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".core");
        PathBuf::from(p)
    });
    std::fs::write(&a.out, enc.bitstream.to_bytes())?;
    std::fs::write(&core_out, &enc.core_payload)?;
    let rate = SideInfoRate::of(&enc.bitstream)?;
    print_json(&json!({
        "stream": a.out,
        "core_payload": core_out,
        "samples": x.len(),
        "frames": enc.bitstream.codes.frames,
        "n_q": nq,
        "side_info_bps": rate,
    }));
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> nsbg::Result<()> {
    let bs = SbgBitstream::from_bytes(&std::fs::read(&a.stream)?)?;
    let (model, core) = a.model.build()?;
    let core_bytes = std::fs::read(&a.core_input)?;
    let y = if core_bytes.starts_with(b"RIFF") {
        let x_core = read_wav_bytes(&core_bytes)?;
        pipeline::decode_core_audio(&x_core, &bs, &model)?.0
    } else {
        pipeline::decode(&core_bytes, &bs, core.as_ref(), &model)?
    };
    write_wav(&a.out, &y, WavFormat::Float32)?;
    let cfg = &model.cfg;
    let band_hz = cfg.sample_rate as f64 / 2.0 / cfg.pqmf_bands as f64;
    print_json(&json!({
        "output": a.out,
        "samples": y.len(),
        "n_q": bs.header.n_q,
        "core_bands": cfg.n_core,
        "generated_bands": cfg.n_hf,
        "core_bandwidth_hz": band_hz * cfg.n_core as f64,
        "output_bandwidth_hz": band_hz * (cfg.n_core + cfg.n_hf) as f64,
    }));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> nsbg::Result<()> {
    let cfg = a.model.config()?;
    let mut train = TrainConfig {
        segment_len: a.segment,
        batch_size: a.batch,
        steps: a.steps,
        seed: a.model.seed,
        checkpoint_every: a.checkpoint_every,
        out_dir: Some(a.out.clone()),
        ..TrainConfig::default()
    };
    if let Some(lr) = a.lr {
        train.adam.lr = lr;
    }
    train.validate(&cfg)?;
    let model = match &a.model.model {
        Some(p) => SbgModel::load(&cfg, p)?,
        None => SbgModel::new(&cfg, a.model.seed)?,
    };
    let core = core_from_config(&cfg.core, model.bank.clone())?;
    let ds = match (&a.data, a.synthetic) {
        (Some(dir), _) => Dataset::from_dir(dir, cfg.sample_rate, core.as_ref(), a.segment)?,
        (None, Some(secs)) => {
            let clip_len = 10 * cfg.sample_rate as usize;
            let count = ((secs * cfg.sample_rate as f64) / clip_len as f64).ceil().max(1.0) as usize;
            let clips = synth_corpus(count, clip_len, a.model.seed)
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("synth{i:03}"), c))
                .collect();
            Dataset::new(clips, core.as_ref(), a.segment)?
        }
        (None, None) => return Err(Error::InvalidInput("give --data DIR or --synthetic SECONDS".into())),
    };
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    let mut trainer = Trainer::new(model, train)?;
    let log = trainer.run(&ds)?;
    let tail = &log[log.len().saturating_sub(20)..];
    let mean_tail = tail.iter().map(|r| r.mel).sum::<f64>() / tail.len().max(1) as f64;
    print_json(&json!({
        "out_dir": a.out,
        "steps": log.len(),
        "dataset_secs": ds.duration_secs(),
        "segments": ds.segments.len(),
        "rejected": ds.rejected.len(),
        "final_mel_mean_last20": mean_tail,
    }));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> nsbg::Result<()> {
    let cfg = load_config(&a.config)?;
    let bank = design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps_per_band, cfg.pqmf_stopband_db)?;
    let r = read_wav(&a.reference)?;
    let t = read_wav(&a.test)?;
    let mut report = evaluate(&r, &t, a.delay, &cfg, &bank)?;
    if let Some(s) = &a.stream {
        report.side_info = Some(SideInfoRate::of(&SbgBitstream::from_bytes(&std::fs::read(s)?)?)?);
    }
    match &a.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => {
            let mut text = String::from("band,snr_db\n");
            for (k, s) in report.band_snr_db.iter().enumerate() {
                text.push_str(&format!("{k},{s}\n"));
            }
            text.push_str(&format!("lsd_db,{}\n", report.lsd_db));
            std::fs::write(p, text)?;
        }
        Some(p) => std::fs::write(p, serde_json::to_string_pretty(&report).expect("report serializes"))?,
        None => {}
    }
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> nsbg::Result<()> {
    let bytes = std::fs::read(&a.file)?;
    if bytes.starts_with(checkpoint::MAGIC) {
        let records = checkpoint::decode(&bytes)?;
        let params: usize = records.iter().map(|(_, _, v)| v.len()).sum();
        print_json(&json!({
            "kind": "checkpoint",
            "tensors": records.len(),
            "parameters": params,
        }));
    } else if bytes.starts_with(b"RIFF") {
        let x = read_wav_bytes(&bytes)?;
        print_json(&json!({
            "kind": "wav",
            "sample_rate": x.sample_rate(),
            "samples": x.len(),
            "seconds": x.duration_secs(),
        }));
    } else {
        let bs = SbgBitstream::from_bytes(&bytes)?;
        let h = &bs.header;
        print_json(&json!({
            "kind": "bitstream",
            "version": h.version,
            "sample_rate": h.sample_rate,
            "n_core": h.n_core,
            "n_hf": h.n_hf,
            "n_q": h.n_q,
            "codebook_size": h.codebook_size,
            "hop": h.hop,
            "frames": h.num_frames,
            "bytes": bytes.len(),
            "side_info_bps": SideInfoRate::of(&bs)?,
        }));
    }
    Ok(())
}
