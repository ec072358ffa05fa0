//! `vqcpc-gan`: prepare data, train the tokenizer and the GAN, generate
//! variable-length notes and score them.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, unknown
//! config keys) and 2 when a stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vqcpc_gan::config::RunConfig;
use vqcpc_gan::dsp::synth::generate_corpus;
use vqcpc_gan::pipeline::{self, GenerateRequest, RunDir, TokenSource};

#[derive(Parser, Debug)]
#[command(name = "vqcpc-gan", version, about = "Token-conditioned variable-length note synthesis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Config file (TOML). Defaults to the run directory's snapshot, then the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set gan_learning_rate=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run directory holding data, checkpoints, logs and reports.
    #[arg(long, default_value = "run", global = true)]
    run_dir: PathBuf,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing outputs (and a differing config snapshot).
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan NSynth-named wave files, split them and compute features.
    Prepare {
        #[arg(long)]
        audio_dir: PathBuf,
        /// Resample files whose rate differs from the configured one.
        #[arg(long)]
        resample: bool,
    },
    /// Train the token encoder.
    TrainVqcpc,
    /// Extract token sequences for both splits.
    Encode,
    /// Train (or resume) the progressive GAN.
    TrainGan {
        /// Stop once this many iterations have run in total.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Synthesize one note of arbitrary length.
    Generate {
        /// MIDI pitch.
        #[arg(long)]
        pitch: u8,
        /// Length in seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Token source: a `.tok` file, a reference `.wav`, or `const:K`.
        #[arg(long, default_value = "const:0")]
        tokens: String,
        /// Pick this sequence from a token file instead of the first one.
        #[arg(long)]
        token_id: Option<String>,
        #[arg(long, default_value_t = 0)]
        z_seed: u64,
        /// Generator checkpoint (defaults to the run's latest).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the generator with PIS, IIS, KID and FAD.
    Evaluate,
    /// Print the resolved configuration.
    DumpConfig,
    /// Write a labelled synthetic corpus of NSynth-named wave files.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        clips: usize,
    },
}

/// Failures that are the caller's fault rather than the pipeline's.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve_config(g: &Global) -> Result<RunConfig> {
    let run = RunDir::new(&g.run_dir);
    let base = match &g.config {
        Some(path) => RunConfig::load(path),
        None => run.stored_config().map(|c| c.unwrap_or_default()),
    };
    let mut sets = g.overrides.clone();
    if let Some(seed) = g.seed {
        sets.push(format!("seed={seed}"));
    }
    base.and_then(|c| c.with_overrides(&sets)).map_err(|e| UsageError(e.to_string()).into())
}

fn parse_tokens(spec: &str, token_id: Option<String>) -> Result<TokenSource> {
    if let Some(k) = spec.strip_prefix("const:") {
        let k = k.parse().map_err(|_| UsageError(format!("bad constant token `{k}`")))?;
        return Ok(TokenSource::Constant(k));
    }
    let path = PathBuf::from(spec);
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    Ok(if is_wav {
        TokenSource::Reference(path)
    } else {
        TokenSource::File {
            path,
            source_id: token_id,
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    let run = RunDir::new(&g.run_dir);
    match cli.command {
        Command::DumpConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::SynthCorpus { out, clips } => {
            let m = generate_corpus(
                &out,
                clips,
                cfg.pitch_min,
                cfg.pitch_max,
                cfg.clip_samples as f64 / cfg.sample_rate as f64,
                cfg.sample_rate,
                cfg.seed,
            )?;
            println!("wrote {} clips ({} families) to {}", m.len(), m.families().len(), out.display());
            return Ok(());
        }
        _ => {}
    }
    run.bind_config(&cfg, g.force)?;
    match cli.command {
        Command::Prepare { audio_dir, resample } => {
            let s = pipeline::prepare(&run, &cfg, &audio_dir, resample, g.force)?;
            println!(
                "prepared {} train / {} test clips, {} pitches, families: {}",
                s.train,
                s.test,
                s.pitches.len(),
                s.families.join(", ")
            );
        }
        Command::TrainVqcpc => {
            let s = pipeline::train_encoder(&run, &cfg, g.force)?;
            println!(
                "encoder: {} steps, final InfoNCE {:.4} (chance {:.4}), codebook perplexity {:.2}",
                s.steps, s.final_infonce, s.chance_infonce, s.perplexity
            );
        }
        Command::Encode => {
            let p = pipeline::encode(&run, g.force)?;
            println!("tokens written; training-split perplexity {p:.2}");
        }
        Command::TrainGan { stop_after } => {
            let s = pipeline::train_gan_stage(&run, &cfg, g.force, stop_after)?;
            let state = if s.finished { "finished" } else { "paused" };
            match s.last {
                Some(r) => println!(
                    "gan {state} at step {}: D {:.4}, G {:.4}",
                    s.steps, r.report.d_total, r.report.g_total
                ),
                None => println!("gan {state} at step {}", s.steps),
            }
        }
        Command::Generate {
            pitch,
            duration,
            tokens,
            token_id,
            z_seed,
            checkpoint,
            out,
        } => {
            if !(duration > 0.0) {
                bail!(UsageError(format!("--duration must be positive, got {duration}")));
            }
            let req = GenerateRequest {
                pitch,
                duration,
                tokens: parse_tokens(&tokens, token_id)?,
                z_seed,
                checkpoint,
            };
            let gen = pipeline::generate_to_file(&run, &cfg, &req, &out, g.force)?;
            println!(
                "wrote {} ({} samples, {} frames from {} tokens)",
                out.display(),
                gen.samples.len(),
                gen.frames,
                gen.source_tokens.len()
            );
        }
        Command::Evaluate => {
            let reports = pipeline::evaluate_stage(&run, &cfg, g.force)?;
            for r in &reports {
                println!("{}", r.summary());
            }
            println!("report: {}", run.metrics().display());
        }
        Command::DumpConfig | Command::SynthCorpus { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli).context("vqcpc-gan failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.chain().any(|c| c.is::<UsageError>()) => {
            eprintln!("error: {}", e.root_cause());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
