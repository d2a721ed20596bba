//! `bsrnn` — band-split RNN speech enhancement toolkit.
//!
//! Subcommands: `simulate`, `train`, `enhance`, `eval`, `macs`, `rtf`,
//! `inspect`. Exit codes: 0 success, 2 usage/config errors, 1 runtime
//! errors.

mod config;

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use bsrnn_core::audio_io::{read_wav, write_wav, WavFormat};
use bsrnn_core::data::{
    derive_example_seed, simulate_example, Catalog, EnrollmentEmbedding, SourcePool,
};
use bsrnn_core::metrics::{external_pesq, lsd, measure_rtf, si_snr, CommandAdapter, MetricReport};
use bsrnn_core::model::{
    count_macs, enhance, model_from_checkpoint, stream_enhance, Checkpoint, Model, Streamer,
};
use bsrnn_core::trainer::{warm_start_pse, Trainer};
use bsrnn_core::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "bsrnn", version, about = "Band-split RNN speech enhancement")]
struct Cli {
    /// Config file (TOML). Falls back to $BSRNN_CONFIG, then ./bsrnn.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress the resolved-config echo on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy mixtures from a catalog and write an audit trail.
    Simulate {
        /// Number of examples.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Draw interferer categories and write enrollment clips.
        #[arg(long)]
        personalized: bool,
        /// Override [simulation].seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train or finetune a model.
    Train {
        #[arg(long)]
        out_dir: PathBuf,
        /// Resume from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Initialize model weights from a checkpoint (e.g. a pretrained
        /// model before finetuning).
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Treat --init-from as a non-personalized base for a personalized
        /// model (identity enrollment gating).
        #[arg(long)]
        warm_start_pse: bool,
        /// Override [training].phase.
        #[arg(long)]
        phase: Option<String>,
        /// Override [training].max_iters.
        #[arg(long)]
        max_iters: Option<u64>,
    },
    /// Enhance a WAV file with a checkpoint.
    Enhance {
        checkpoint: PathBuf,
        /// Input WAV (ignored with --raw).
        #[arg(required_unless_present = "raw")]
        input: Option<PathBuf>,
        /// Output WAV (ignored with --raw).
        #[arg(required_unless_present = "raw")]
        output: Option<PathBuf>,
        /// Enrollment embedding file for personalized checkpoints.
        #[arg(long)]
        enroll: Option<PathBuf>,
        /// Frame-by-frame streaming inference (causal checkpoints only).
        #[arg(long)]
        stream: bool,
        /// LSTM state reset period in seconds for streaming (default 10).
        #[arg(long)]
        reset_period_s: Option<f64>,
        /// Stream raw float32 little-endian samples stdin -> stdout.
        #[arg(long, requires = "stream")]
        raw: bool,
    },
    /// Objective metrics between a reference and an estimate.
    Eval {
        reference: PathBuf,
        estimate: PathBuf,
        /// External scorer template, e.g. "pesq {ref} {est}".
        #[arg(long)]
        pesq_cmd: Option<String>,
        /// Score pattern with a (float) capture (default "PESQ=(float)").
        #[arg(long)]
        pesq_pattern: Option<String>,
    },
    /// Analytic multiply-accumulate budget of a config or checkpoint.
    Macs {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Streaming real-time factor of a causal checkpoint.
    Rtf {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Checkpoint metadata and tensor table.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::resolve(cli.config.as_deref())?;
    if !cli.quiet {
        let (text, hash) = config.echo()?;
        eprintln!("# resolved config (sha256 {hash})");
        for line in text.lines() {
            eprintln!("# {line}");
        }
    }
    match cli.command {
        Command::Simulate {
            count,
            out_dir,
            personalized,
            seed,
        } => cmd_simulate(&config, count, &out_dir, personalized, seed),
        Command::Train {
            out_dir,
            resume,
            init_from,
            warm_start_pse: warm,
            phase,
            max_iters,
        } => cmd_train(&config, out_dir, resume, init_from, warm, phase, max_iters),
        Command::Enhance {
            checkpoint,
            input,
            output,
            enroll,
            stream,
            reset_period_s,
            raw,
        } => cmd_enhance(checkpoint, input, output, enroll, stream, reset_period_s, raw),
        Command::Eval {
            reference,
            estimate,
            pesq_cmd,
            pesq_pattern,
        } => cmd_eval(&config, reference, estimate, pesq_cmd, pesq_pattern),
        Command::Macs { checkpoint } => cmd_macs(&config, checkpoint),
        Command::Rtf {
            checkpoint,
            seconds,
            runs,
        } => cmd_rtf(checkpoint, seconds, runs),
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint),
    }
}

fn load_pool(config: &RunConfig) -> Result<Arc<SourcePool>> {
    let catalog_path = config
        .data
        .catalog
        .as_ref()
        .ok_or_else(|| Error::Usage("no [data].catalog configured".into()))?;
    Ok(Arc::new(SourcePool::new(Catalog::load(catalog_path)?)))
}

fn cmd_simulate(
    config: &RunConfig,
    count: usize,
    out_dir: &PathBuf,
    personalized: bool,
    seed: Option<u64>,
) -> Result<()> {
    let pool = load_pool(config)?;
    let mut sim = config.simulation_config()?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let audit_path = out_dir.join("draws.jsonl");
    let mut audit = std::fs::File::create(&audit_path).map_err(|e| Error::io(&audit_path, e))?;

    for i in 0..count {
        let example_seed = derive_example_seed(sim.seed, i as u64);
        let example = simulate_example(&pool, &sim, personalized, example_seed)?;
        let mixture_name = format!("mixture_{i}.wav");
        let target_name = format!("target_{i}.wav");
        write_wav(out_dir.join(&mixture_name), &example.mixture, WavFormat::Float32)?;
        write_wav(out_dir.join(&target_name), &example.target_anechoic, WavFormat::Float32)?;
        let mut record = json!({
            "index": i,
            "mixture": mixture_name,
            "target": target_name,
            "draws": example.draws,
        });
        if let Some(enr) = &example.enrollment {
            let enroll_name = format!("enroll_{i}.wav");
            write_wav(out_dir.join(&enroll_name), enr, WavFormat::Float32)?;
            record["enroll"] = json!(enroll_name);
        }
        writeln!(audit, "{record}").map_err(|e| Error::io(&audit_path, e))?;
    }
    println!(
        "{}",
        json!({"written": count, "out_dir": out_dir, "audit": audit_path})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &RunConfig,
    out_dir: PathBuf,
    resume: Option<PathBuf>,
    init_from: Option<PathBuf>,
    warm: bool,
    phase: Option<String>,
    max_iters: Option<u64>,
) -> Result<()> {
    let pool = load_pool(config)?;
    let mut run_config = config.clone();
    if let Some(p) = phase {
        run_config.training.phase = p;
    }
    if let Some(m) = max_iters {
        run_config.training.max_iters = m;
    }
    let train_cfg = run_config.train_config()?;
    let sim_cfg = run_config.simulation_config()?;

    let mut trainer = match (resume, init_from) {
        (Some(path), None) => {
            Trainer::<f32>::resume(&path, train_cfg, sim_cfg, pool, &out_dir)?
        }
        (None, Some(path)) => {
            let ckpt = Checkpoint::load(&path)?;
            let model = if warm {
                let pse_config = run_config.model_config()?;
                warm_start_pse::<f32>(&ckpt, pse_config)?
            } else {
                model_from_checkpoint::<f32>(&ckpt)?
            };
            Trainer::new(model, train_cfg, sim_cfg, pool, &out_dir)?
        }
        (None, None) => {
            let model_cfg = run_config.model_config()?;
            let model = Model::<f32>::init(model_cfg, run_config.model.init_seed)?;
            Trainer::new(model, train_cfg, sim_cfg, pool, &out_dir)?
        }
        (Some(_), Some(_)) => {
            return Err(Error::Usage("--resume and --init-from are exclusive".into()))
        }
    };
    let outcome = trainer.run()?;
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(())
}

fn load_embedding(path: Option<&PathBuf>) -> Result<Option<Vec<f32>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let e = EnrollmentEmbedding::load(p)?;
            Ok(Some(e.vector))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_enhance(
    checkpoint: PathBuf,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    enroll: Option<PathBuf>,
    stream: bool,
    reset_period_s: Option<f64>,
    raw: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let model = model_from_checkpoint::<f32>(&ckpt)?;
    let embedding = load_embedding(enroll.as_ref())?;
    let reset = Some(reset_period_s.unwrap_or(10.0));

    if raw {
        return stream_raw(&model, embedding.as_deref(), reset);
    }
    let input = input.ok_or_else(|| Error::Usage("input WAV required".into()))?;
    let output = output.ok_or_else(|| Error::Usage("output WAV required".into()))?;
    let x = read_wav(&input)?;
    let y = if stream {
        stream_enhance(&model, &x, embedding.as_deref(), reset)?
    } else {
        enhance(&model, &x, embedding.as_deref())?
    };
    write_wav(&output, &y, WavFormat::Float32)?;
    println!(
        "{}",
        json!({"input": input, "output": output, "samples": y.len(), "stream": stream})
    );
    Ok(())
}

/// Raw float32 little-endian streaming on stdin/stdout.
fn stream_raw(model: &Model<f32>, embedding: Option<&[f32]>, reset: Option<f64>) -> Result<()> {
    let mut streamer = Streamer::new(model, embedding, reset)
        .map_err(|e| match e {
            Error::Usage(m) => Error::Usage(m),
            other => other,
        })?;
    let hop = streamer.hop_len();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut reader = stdin.lock();
    let mut writer = std::io::BufWriter::new(stdout.lock());
    let mut byte_block = vec![0u8; hop * 4];
    let mut input = vec![0.0f32; hop];
    let mut output = vec![0.0f32; hop];
    loop {
        let mut filled = 0;
        while filled < byte_block.len() {
            let n = reader
                .read(&mut byte_block[filled..])
                .map_err(|e| Error::io("<stdin>", e))?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            break;
        }
        byte_block[filled..].iter_mut().for_each(|b| *b = 0);
        for (i, chunk) in byte_block.chunks_exact(4).enumerate() {
            input[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        streamer.process_block(&input, &mut output)?;
        for &v in &output {
            writer
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
        if filled < byte_block.len() {
            break;
        }
    }
    writer.flush().map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn cmd_eval(
    config: &RunConfig,
    reference: PathBuf,
    estimate: PathBuf,
    pesq_cmd: Option<String>,
    pesq_pattern: Option<String>,
) -> Result<()> {
    let r = read_wav(&reference)?;
    let e = read_wav(&estimate)?;
    let template = pesq_cmd.or_else(|| config.adapters.pesq_command.clone());
    let pesq = match template {
        None => None,
        Some(cmd) => {
            let pattern = pesq_pattern
                .or_else(|| config.adapters.pesq_pattern.clone())
                .unwrap_or_else(|| "PESQ=(float)".into());
            let adapter = CommandAdapter::new(cmd, pattern);
            match external_pesq(&estimate, &reference, &adapter) {
                Ok(score) => Some(score),
                Err(err) => {
                    eprintln!("pesq adapter failed, reporting absent: {err}");
                    None
                }
            }
        }
    };
    let report = MetricReport {
        si_snr_db: si_snr(&e, &r)?,
        lsd_db: lsd(&e, &r)?,
        pesq,
        rtf: None,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_macs(config: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let model_cfg = match checkpoint {
        Some(path) => Checkpoint::load(&path)?.config,
        None => config.model_config()?,
    };
    let report = count_macs(&model_cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_rtf(checkpoint: PathBuf, seconds: f64, runs: usize) -> Result<()> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let model = model_from_checkpoint::<f32>(&ckpt)?;
    let rtf = measure_rtf(&model, seconds, runs)?;
    println!("{}", json!({"rtf": rtf, "audio_seconds": seconds, "runs": runs.max(5)}));
    Ok(())
}

fn cmd_inspect(checkpoint: PathBuf) -> Result<()> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let tensors: Vec<serde_json::Value> = ckpt
        .tensors
        .iter()
        .map(|(name, shape, data)| json!({"name": name, "shape": shape, "values": data.len()}))
        .collect();
    let total: usize = ckpt.tensors.iter().map(|(_, _, d)| d.len()).sum();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "config": ckpt.config,
            "meta": ckpt.meta,
            "tensor_count": ckpt.tensors.len(),
            "total_values": total,
            "tensors": tensors,
        }))?
    );
    Ok(())
}
