//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The end-to-end desk pipeline runs once through the real binary on a
//! 64-clip synthetic corpus; criteria that need trained artifacts read them
//! from that run. A second run with the same seed is taken through the first
//! GAN phase for the determinism check. Expect the whole target to take
//! well over half an hour on one core.

use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcpc_gan::config::RunConfig;
use vqcpc_gan::dsp::{cqt, invert_magif, stft_magif, AudioClip, DatasetManifest, SpectroTensor};
use vqcpc_gan::eval::{fad, frechet_distance, inception_score, kid, InceptionCheckpoint};
use vqcpc_gan::gan::{
    assemble_input, discriminator_loss, generator_loss, gradient_penalty, gradient_penalty_at, pitch_onehot,
    resample_tokens, CriticEval, GanConfig, Generator, GlobalCritic, Labels, LocalCritic, LossWeights, PenaltyMode,
    ScaleConfig,
};
use vqcpc_gan::dsp::synth::generate_corpus;
use vqcpc_gan::pipeline::{frames_for_duration, prepare, RunDir};
use vqcpc_gan::train::{progressive_schedule, GanLogRow, GeneratorCheckpoint};
use vqcpc_gan::vqcpc::{
    codebook_perplexity, draw_negatives, quantize, quantize_batch, read_token_file, vqcpc_step_loss, Codebook,
    NegativeSharing, NegativeSource, VqcpcConfig, VqcpcModel,
};
use vqcpc_gan_autodiff::nn::Var;
use vqcpc_gan_autodiff::testing::{finite_difference, max_relative_error};
use vqcpc_gan_autodiff::{grad, Tensor};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

const BIN: &str = env!("CARGO_BIN_EXE_vqcpc-gan");
const CLIPS: usize = 64;

// ---------------------------------------------------------------------------
// End-to-end fixture

struct Stage {
    name: &'static str,
    secs: f64,
}

struct E2e {
    root: PathBuf,
    run: RunDir,
    cfg: RunConfig,
    stages: Vec<Stage>,
    failure: Option<String>,
}

impl E2e {
    fn secs(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.name == name).map(|s| s.secs)
    }

    fn total_secs(&self) -> f64 {
        self.stages.iter().map(|s| s.secs).sum()
    }

    fn require(&self) -> Result<(), String> {
        match &self.failure {
            Some(f) => Err(format!("end-to-end run failed: {f}")),
            None => Ok(()),
        }
    }
}

fn cli(run: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(BIN)
        .arg("--run-dir")
        .arg(run)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("cannot start {BIN}: {e}"))?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).trim().to_string())
    } else {
        Err(format!(
            "`{}` exited with {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

/// Runs `stages` in order under `root`, stopping at the first failure.
fn run_stages(root: &Path, run: &Path, stages: &[(&'static str, Vec<String>)]) -> (Vec<Stage>, Option<String>) {
    let mut done = Vec::new();
    for (name, args) in stages {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let t = Instant::now();
        let out = cli(run, &args);
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(stdout) => {
                println!("    {name:<12} {secs:7.1} s  {}", stdout.lines().last().unwrap_or(""));
                done.push(Stage { name, secs });
            }
            Err(e) => return (done, Some(format!("{name}: {e} (in {})", root.display()))),
        }
    }
    (done, None)
}

fn pipeline_stages(corpus: &Path, out_wav: &Path, stop_after: Option<usize>) -> Vec<(&'static str, Vec<String>)> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut stages = vec![
        ("prepare", s(&["prepare", "--audio-dir", corpus.to_str().unwrap()])),
        ("train-vqcpc", s(&["train-vqcpc"])),
        ("encode", s(&["encode"])),
    ];
    match stop_after {
        Some(n) => stages.push(("train-gan", s(&["train-gan", "--stop-after", &n.to_string()]))),
        None => {
            stages.push(("train-gan", s(&["train-gan"])));
            stages.push((
                "generate",
                s(&["generate", "--pitch", "60", "--duration", "4", "--tokens", "const:2", "--z-seed", "1", "--out", out_wav.to_str().unwrap()]),
            ));
            stages.push(("evaluate", s(&["evaluate"])));
        }
    }
    stages
}

fn end_to_end(root: &Path) -> E2e {
    let cfg = RunConfig::desk();
    let corpus = root.join("corpus");
    let run = root.join("run");
    println!("  end-to-end desk run in {}", root.display());
    let t = Instant::now();
    let synth = cli(&run, &["synth-corpus", "--out", corpus.to_str().unwrap(), "--clips", &CLIPS.to_string()]);
    let mut stages = vec![Stage {
        name: "synth-corpus",
        secs: t.elapsed().as_secs_f64(),
    }];
    let failure = match synth {
        Err(e) => Some(e),
        Ok(_) => {
            let (done, failure) = run_stages(root, &run, &pipeline_stages(&corpus, &root.join("generated.wav"), None));
            stages.extend(done);
            failure
        }
    };
    E2e {
        root: root.to_path_buf(),
        run: RunDir::new(run),
        cfg,
        stages,
        failure,
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn flatten(vars: &[Var]) -> Vec<f64> {
    vars.iter().flat_map(|v| v.to_vec()).collect()
}

fn load(vars: &[Var], flat: &[f64]) {
    let mut at = 0;
    for v in vars {
        let n: usize = v.shape().iter().product();
        v.set(flat[at..at + n].to_vec());
        at += n;
    }
}

/// Max relative error between the analytic gradient of `loss` and central
/// differences, over `vars`.
fn gradient_error(vars: &[Var], loss: &dyn Fn() -> Tensor) -> f64 {
    let tensors: Vec<Tensor> = vars.iter().map(|v| v.tensor()).collect();
    let analytic: Vec<f64> = grad(&[loss()], &tensors, false).iter().flat_map(|g| g.to_vec()).collect();
    let x0 = flatten(vars);
    let numeric = finite_difference(
        |x| {
            load(vars, x);
            loss().item()
        },
        &x0,
        1e-6,
    );
    load(vars, &x0);
    max_relative_error(&analytic, &numeric, 1e-4)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Column `name` of a tab-separated log with a header row.
fn tsv_column(text: &str, name: &str) -> Result<Vec<f64>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty log")?.split('\t').collect();
    let col = header.iter().position(|h| *h == name).ok_or(format!("no `{name}` column"))?;
    lines
        .map(|l| l.split('\t').nth(col).and_then(|v| v.parse().ok()).ok_or(format!("bad row `{l}`")))
        .collect()
}

fn all_numbers_finite(text: &str) -> bool {
    text.lines()
        .skip(1)
        .flat_map(|l| l.split('\t'))
        .filter_map(|v| v.parse::<f64>().ok())
        .all(f64::is_finite)
}

// ---------------------------------------------------------------------------
// Criteria

fn criterion_1(e2e: &E2e) -> Check {
    let cfg = RunConfig::desk().vqcpc_model();
    ensure!((cfg.prediction_steps, cfg.negatives) == (5, 16), "desk encoder uses K={} N={}", cfg.prediction_steps, cfg.negatives);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = ok(VqcpcModel::new(&cfg, &mut rng), "model")?;
    model.zero_heads();
    let (batch, len) = (4, 32);
    let x = Tensor::from_vec(uniform(&mut rng, batch * len * cfg.input_bins, -1.0, 1.0), &[batch * len, cfg.input_bins]);
    let negs = ok(draw_negatives(&mut rng, batch, len, 5, 16, cfg.negative_sharing, cfg.negative_source), "negatives")?;
    let loss = ok(vqcpc_step_loss(&model, &x, batch, len, &negs, None), "loss")?.parts.infonce;
    let chance = 5.0 * 17f64.ln();
    ensure!((loss - chance).abs() < 1e-6, "zeroed heads give {loss}, expected {chance}");

    e2e.require()?;
    let secs = e2e.secs("train-vqcpc").unwrap_or(f64::INFINITY);
    let log = ok(std::fs::read_to_string(e2e.run.vqcpc_log()), "encoder log")?;
    let infonce = tsv_column(&log, "infonce")?;
    ensure!(infonce.len() == e2e.cfg.vqcpc_steps, "{} logged steps, expected {}", infonce.len(), e2e.cfg.vqcpc_steps);
    let tail = infonce.len() / 10;
    let final_loss = infonce[infonce.len() - tail..].iter().sum::<f64>() / tail as f64;
    let seqs = ok(read_token_file(&e2e.run.tokens("train")), "train tokens")?;
    let ppl = codebook_perplexity(seqs.iter().map(|s| s.tokens.as_slice()));
    let detail = format!(
        "5 ln 17 oracle ok; {} steps in {secs:.0} s, final InfoNCE {final_loss:.3} (< {:.3}), perplexity {ppl:.2}",
        infonce.len(),
        0.5 * chance
    );
    ensure!(secs < 600.0, "{detail}: slower than 10 min");
    ensure!(final_loss < 0.5 * chance, "{detail}: InfoNCE not below half of chance");
    ensure!(ppl >= 4.0, "{detail}: perplexity below 4");
    Ok(detail)
}

fn criterion_2() -> Check {
    // 4x4 lattice with spacing 1, plus duplicates of centroids 5 and 10.
    let mut c = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            c.extend_from_slice(&[i as f64, j as f64]);
        }
    }
    c.extend_from_slice(&[1.0, 1.0, 2.0, 2.0]);
    let cb = ok(Codebook::new(2, c.clone()), "codebook")?;
    let oracle = |e: &[f64]| {
        let d: Vec<f64> = c.chunks(2).map(|p| (p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2)).collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().position(|&v| v == best).unwrap()
    };
    let mut checked = 0;
    // Every point of a quarter-step grid, including all midpoints and
    // lattice corners where 2 or 4 centroids tie.
    for a in -2..=14 {
        for b in -2..=14 {
            let e = [a as f64 * 0.25, b as f64 * 0.25];
            let q = ok(quantize(&e, &cb), "quantize")?;
            ensure!(q.token == oracle(&e), "{e:?}: token {} vs oracle {}", q.token, oracle(&e));
            let d = (q.quantized[0] - e[0]).powi(2) + (q.quantized[1] - e[1]).powi(2);
            ensure!(q.vq_loss == d && q.commit_loss == d, "{e:?}: losses {} {} vs {d}", q.vq_loss, q.commit_loss);
            let qq = ok(quantize(&q.quantized, &cb), "requantize")?;
            ensure!(qq.token == q.token && qq.vq_loss == 0.0 && qq.commit_loss == 0.0, "{e:?}: not idempotent");
            checked += 1;
        }
    }
    for j in 0..18 {
        let q = ok(quantize(cb.centroid(j), &cb), "quantize")?;
        let expected = match j {
            16 => 5,
            17 => 10,
            _ => j,
        };
        ensure!(q.token == expected && q.vq_loss == 0.0 && q.commit_loss == 0.0, "centroid {j} -> token {}", q.token);
    }
    let two = ok(Codebook::new(2, vec![0.0, 0.0, 10.0, 10.0]), "codebook")?;
    ensure!(ok(quantize(&[1.0, 1.0], &two), "quantize")?.token == 0, "nearest of {{(0,0),(10,10)}}");
    ensure!(ok(quantize(&[5.0, 5.0], &two), "quantize")?.token == 0, "tie must go to index 0");
    ensure!(Codebook::new(2, vec![]).is_err(), "empty codebook accepted");
    // The batched path agrees with the scalar one.
    let pts: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37) % 3.2).collect();
    let batch = quantize_batch(&Tensor::from_vec(pts.clone(), &[20, 2]), &Tensor::from_vec(c.clone(), &[18, 2]), None);
    for (r, e) in pts.chunks(2).enumerate() {
        ensure!(batch.tokens[r] == oracle(e), "batched row {r}");
    }
    Ok(format!("{checked} grid points + 18 centroids against a brute-force oracle; ties to lowest index"))
}

fn micro_vqcpc() -> VqcpcConfig {
    VqcpcConfig {
        input_bins: 6,
        encoder_channels: vec![5, 3],
        codebook_size: 4,
        gru_hidden: 4,
        gru_layers: 1,
        context_dim: 3,
        prediction_steps: 2,
        negatives: 3,
        ..VqcpcConfig::default()
    }
}

fn vqcpc_gradient_error(cfg: &VqcpcConfig, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ok(VqcpcModel::new(cfg, &mut rng), "model")?;
    ensure!(model.vs.num_parameters() <= 1000, "{} parameters", model.vs.num_parameters());
    let (batch, len) = (2, 6);
    let x = Tensor::from_vec(uniform(&mut rng, batch * len * cfg.input_bins, -1.0, 1.0), &[batch * len, cfg.input_bins]);
    let negs = ok(
        draw_negatives(&mut rng, batch, len, cfg.prediction_steps, cfg.negatives, cfg.negative_sharing, cfg.negative_source),
        "negatives",
    )?;
    let frozen = ok(vqcpc_step_loss(&model, &x, batch, len, &negs, None), "loss")?.frozen;
    let loss = || vqcpc_step_loss(&model, &x, batch, len, &negs, Some(&frozen)).unwrap().total;
    Ok(gradient_error(&model.vs.vars(), &loss))
}

struct GanMicro {
    g: Generator,
    dl: LocalCritic,
    dg: GlobalCritic,
    cond: Tensor,
    real: Tensor,
}

const MICRO_SCALE: ScaleConfig = ScaleConfig { index: 2, alpha: 0.6 };
const REAL_PITCH: [usize; 2] = [0, 1];
const REAL_TOKENS: [usize; 8] = [2, 0, 1, 1, 0, 0, 2, 1];
const FAKE_PITCH: [usize; 2] = [1, 0];
const FAKE_TOKENS: [usize; 8] = [0, 1, 2, 2, 1, 1, 0, 2];

fn gan_micro() -> Result<GanMicro, String> {
    let cfg = GanConfig {
        pitch_classes: 2,
        noise_dim: 2,
        codebook_size: 3,
        base_freq: 4,
        feature_maps: vec![2, 2],
        frames: 4,
        global_hidden: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = ok(Generator::new(&cfg, &mut rng), "generator")?;
    let dl = ok(LocalCritic::new(&cfg, &mut rng), "local critic")?;
    let dg = ok(GlobalCritic::new(&cfg, &mut rng), "global critic")?;
    let total = g.vs.num_parameters() + dl.vs.num_parameters() + dg.vs.num_parameters();
    ensure!(total <= 1000, "micro-models hold {total} parameters");
    // Move biases off exact activation kinks.
    for v in [&g.vs, &dl.vs, &dg.vs].iter().flat_map(|vs| vs.vars()) {
        v.set(v.to_vec().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect());
    }
    let mut cond = Vec::new();
    for (b, &p) in FAKE_PITCH.iter().enumerate() {
        let z = uniform(&mut rng, 2, -1.0, 1.0);
        let tokens: Vec<u8> = FAKE_TOKENS[b * 4..b * 4 + 4].iter().map(|&t| t as u8).collect();
        cond.extend(ok(assemble_input(&z, &pitch_onehot(p, 2), &tokens, 3), "conditioning")?);
    }
    let cond = Tensor::from_vec(cond, &[2, cfg.cond_channels(), 1, 4]);
    let real = Tensor::from_vec(uniform(&mut rng, 2 * 2 * 8 * 4, -0.9, 0.9), &[2, 2, 8, 4]);
    Ok(GanMicro { g, dl, dg, cond, real })
}

fn critic_eval(m: &GanMicro, x: &Tensor) -> CriticEval {
    CriticEval {
        local: m.dl.forward(x, MICRO_SCALE).unwrap(),
        global: m.dg.forward(x, MICRO_SCALE).unwrap(),
    }
}

fn micro_d_loss(m: &GanMicro) -> Tensor {
    let fake = m.g.forward(&m.cond, MICRO_SCALE).unwrap().detach();
    let u = [0.35, 0.8];
    let gp_l = gradient_penalty_at(|x| Ok(m.dl.forward(x, MICRO_SCALE)?.scores), &m.real, &fake, &u, PenaltyMode::PerFrame).unwrap();
    let gp_g = gradient_penalty_at(|x| Ok(m.dg.forward(x, MICRO_SCALE)?.scores), &m.real, &fake, &u, PenaltyMode::Global).unwrap();
    let real = Labels { pitch: &REAL_PITCH, tokens: &REAL_TOKENS };
    let fake_l = Labels { pitch: &FAKE_PITCH, tokens: &FAKE_TOKENS };
    let w = LossWeights::default();
    discriminator_loss(&critic_eval(m, &m.real), &critic_eval(m, &fake), real, fake_l, &gp_l, &gp_g, &w).unwrap().0
}

fn micro_g_loss(m: &GanMicro) -> Tensor {
    let fake = m.g.forward(&m.cond, MICRO_SCALE).unwrap();
    generator_loss(&critic_eval(m, &fake), Labels { pitch: &FAKE_PITCH, tokens: &FAKE_TOKENS }, &LossWeights::default()).unwrap()
}

fn criterion_3() -> Check {
    let mut errs = Vec::new();
    errs.push(("vqcpc", vqcpc_gradient_error(&micro_vqcpc(), 1)?));
    let variant = VqcpcConfig {
        normalize_embeddings: true,
        negative_sharing: NegativeSharing::Shared,
        negative_source: NegativeSource::Batch,
        gru_layers: 2,
        ..micro_vqcpc()
    };
    errs.push(("vqcpc-variant", vqcpc_gradient_error(&variant, 2)?));
    let m = gan_micro()?;
    let mut critic_vars = m.dl.vs.vars();
    critic_vars.extend(m.dg.vs.vars());
    errs.push(("critic", gradient_error(&critic_vars, &|| micro_d_loss(&m))));
    errs.push(("generator", gradient_error(&m.g.vs.vars(), &|| micro_g_loss(&m))));
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure!(errs.iter().all(|(_, e)| *e < 1e-3), "max relative errors: {detail}");
    Ok(format!("max relative errors: {detail}"))
}

fn criterion_4(e2e: &E2e) -> Check {
    let base: Vec<u8> = (0..32).map(|i| (i * 7 % 16) as u8).collect();
    let up = resample_tokens(&base, 128);
    ensure!(up.len() == 128, "resampled length {}", up.len());
    for (i, &t) in base.iter().enumerate() {
        ensure!(up[4 * i..4 * i + 4].iter().all(|&u| u == t), "token {i} is not repeated 4 times");
    }
    e2e.require()?;
    let t = Instant::now();
    let ck = ok(GeneratorCheckpoint::load(&e2e.run.gan()), "generator checkpoint")?;
    let gc = &ck.generator.config;
    ensure!(gc.final_freq() == e2e.cfg.fft_size / 2 && ck.scale.index == gc.n_scales(), "checkpoint is not at the final scale");
    let z = vec![0.1; gc.noise_dim];
    let pitch = *ck.pitches.first().ok_or("checkpoint has no pitches")?;
    let mut counts = Vec::new();
    for (duration, frames) in [(0.5, 16), (1.0, 32), (2.0, 64), (4.0, 128)] {
        ensure!(ok(frames_for_duration(&e2e.cfg, duration), "frames")? == frames, "{duration} s does not map to {frames} frames");
        let tokens = resample_tokens(&base, frames);
        let s = ok(ck.synthesize(pitch, &tokens, frames, &z), "synthesize")?;
        ensure!(s.shape() == [2, gc.final_freq(), frames], "{frames} tokens gave {:?}", s.shape());
        counts.push(s.frames);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("trained generator ({} bins) gives frames {counts:?}; 32->128 repeats x4; {secs:.1} s", gc.final_freq()))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = [3, 2, 4, 5];
    let real = Tensor::from_vec(uniform(&mut rng, 120, -1.0, 1.0), &shape);
    let fake = Tensor::from_vec(uniform(&mut rng, 120, -1.0, 1.0), &shape);
    let mut vals = Vec::new();
    // Linear critics with unit-norm gradients: per sample over (C, F, T),
    // per frame over (C, F).
    let global = ok(
        gradient_penalty(|x| Ok(x.sum_axes(&[1, 2, 3], false).scale(1.0 / 40f64.sqrt())), &real, &fake, PenaltyMode::Global, &mut rng),
        "global penalty",
    )?
    .item();
    let local = ok(
        gradient_penalty(|x| Ok(x.sum_axes(&[1, 2], false).scale(1.0 / 8f64.sqrt())), &real, &fake, PenaltyMode::PerFrame, &mut rng),
        "per-frame penalty",
    )?
    .item();
    ensure!(global.abs() < 1e-5 && local.abs() < 1e-5, "unit-gradient critics give {global} / {local}");
    vals.push(global);
    vals.push(local);
    for mode in [PenaltyMode::Global, PenaltyMode::PerFrame] {
        let gp = ok(gradient_penalty(|x| Ok(Tensor::full(&[x.dim(0), 5], 0.7)), &real, &fake, mode, &mut rng), "penalty")?.item();
        ensure!((gp - 1.0).abs() < 1e-5, "constant critic ({mode:?}) gives {gp}");
        vals.push(gp);
    }
    Ok(format!("unit-gradient {:.1e} / {:.1e}, constant {:.6} / {:.6}", vals[0], vals[1], vals[2], vals[3]))
}

/// Featurizes `n` synthetic clips drawn with a seed the e2e corpus does not use.
fn held_out_pool(e2e: &E2e, n: usize) -> Result<Vec<SpectroTensor>, String> {
    let corpus = e2e.root.join("pool_audio");
    let cfg = &e2e.cfg;
    ok(generate_corpus(&corpus, n, cfg.pitch_min, cfg.pitch_max, 1.0, cfg.sample_rate, cfg.seed ^ 0x9001), "pool corpus")?;
    let pool = RunDir::new(e2e.root.join("pool"));
    ok(pool.bind_config(cfg, true), "pool config")?;
    ok(prepare(&pool, cfg, &corpus, false, true), "pool prepare")?;
    let mut ids: Vec<String> = Vec::new();
    for split in ["train", "test"] {
        let manifest = ok(DatasetManifest::load(&pool.manifest(split)), "pool manifest")?;
        ids.extend(manifest.entries.into_iter().map(|e| e.source_id));
    }
    ids.sort();
    ids.iter().map(|id| ok(SpectroTensor::load(&pool.spectro(id)), "pool features")).collect()
}

fn criterion_6(e2e: &E2e) -> Check {
    ensure!((ok(inception_score(&[0.25; 20], 4), "IS")? - 1.0).abs() < 1e-12, "uniform IS != 1");
    let k = 5;
    let onehot: Vec<f64> = (0..4 * k).flat_map(|r| (0..k).map(move |j| if r % k == j { 1.0 } else { 0.0 })).collect();
    let is = ok(inception_score(&onehot, k), "IS")?;
    ensure!((is - k as f64).abs() < 1e-12, "balanced one-hot IS {is} != {k}");

    let mu_a = nalgebra::DVector::<f64>::from_vec(vec![0.0, 1.0, -2.0, 0.5]);
    let mu_b = nalgebra::DVector::<f64>::from_vec(vec![0.5, 1.0, 1.0, -0.5]);
    let (va, vb) = ([1.0f64, 4.0, 0.25, 2.0], [2.0f64, 1.0, 9.0, 2.0]);
    let ca = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&va));
    let cb = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&vb));
    let closed: f64 = (0..4).map(|i| (mu_a[i] - mu_b[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2)).sum();
    let general = frechet_distance(&mu_a, &ca, &mu_b, &cb);
    ensure!((general - closed).abs() < 1e-6, "diagonal FAD {general} vs closed form {closed}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = uniform(&mut rng, 60 * 3, -1.0, 1.0);
    let b = uniform(&mut rng, 45 * 3, -0.5, 1.5);
    let self_fad = ok(fad(&a, &a, 3), "fad")?;
    ensure!(self_fad <= 1e-6, "fad(A, A) = {self_fad}");

    // Unbiased MMD^2 by explicit double loops with the cubic kernel
    // (x.y / d + 1)^3 written out.
    let k3 = |x: &[f64], i: usize, y: &[f64], j: usize| {
        let dot: f64 = (0..3).map(|c| x[i * 3 + c] * y[j * 3 + c]).sum();
        (dot / 3.0 + 1.0).powi(3)
    };
    let (m, n) = (60, 45);
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += k3(&a, i, &a, j);
            }
        }
        for j in 0..n {
            kxy += k3(&a, i, &b, j);
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += k3(&b, i, &b, j);
            }
        }
    }
    let expected = kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64 - 2.0 * kxy / (m * n) as f64;
    let got = ok(kid(&a, &b, 3), "kid")?;
    ensure!((got - expected).abs() < 1e-9, "KID {got} vs double-loop {expected}");

    // Real halves vs a noise-degraded half, embedded by the run's classifier.
    // FAD's finite-sample bias grows like dim / n, so the halves come from a
    // fresh 512-clip draw of the same corpus rather than the 64 training clips.
    e2e.require()?;
    let cls = ok(InceptionCheckpoint::load(&e2e.run.inception()), "classifier")?;
    let real = held_out_pool(e2e, 512)?;
    let (even, odd): (Vec<_>, Vec<_>) = real.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let half_a: Vec<SpectroTensor> = even.into_iter().map(|(_, s)| s).collect();
    let half_b: Vec<SpectroTensor> = odd.into_iter().map(|(_, s)| s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let degraded: Vec<SpectroTensor> = half_b
        .iter()
        .map(|s| {
            let mut d = s.clone();
            d.data.iter_mut().for_each(|v| *v = (*v + rng.random_range(-0.8..0.8)).clamp(-1.0, 1.0));
            d
        })
        .collect();
    let ea = ok(cls.model.embed(&half_a), "embed")?;
    let eb = ok(cls.model.embed(&half_b), "embed")?;
    let ed = ok(cls.model.embed(&degraded), "embed")?;
    let split = ok(fad(&ea.vectors, &eb.vectors, ea.dim), "fad")?;
    let worse = ok(fad(&ea.vectors, &ed.vectors, ea.dim), "fad")?;
    ensure!(split < 0.1 * worse, "real-split FAD {split:.4} vs degraded {worse:.4}");
    Ok(format!(
        "IS 1 and {k} exact; diagonal FAD gap {:.1e}; fad(A,A) {self_fad:.1e}; KID gap {:.1e}; split FAD {split:.3} < 0.1 x degraded {worse:.3}",
        (general - closed).abs(),
        (got - expected).abs()
    ))
}

fn criterion_7(e2e: &E2e) -> Check {
    e2e.require()?;
    let total = e2e.total_secs();
    let timing = e2e.stages.iter().map(|s| format!("{} {:.0}s", s.name, s.secs)).collect::<Vec<_>>().join(", ");
    ensure!(total < 45.0 * 60.0, "took {:.1} min ({timing})", total / 60.0);

    let schedule = ok(progressive_schedule(&e2e.cfg), "schedule")?;
    ensure!(schedule.len() == 6 && schedule.iter().all(|p| p.iterations == 200), "desk schedule is not 6 x 200: {schedule:?}");
    let gan_log = ok(std::fs::read_to_string(e2e.run.gan_log()), "gan log")?;
    ensure!(gan_log.lines().next() == Some(GanLogRow::HEADER), "gan log header");
    ensure!(gan_log.lines().count() == 1 + 1200, "gan log holds {} rows", gan_log.lines().count() - 1);
    let vq_log = ok(std::fs::read_to_string(e2e.run.vqcpc_log()), "encoder log")?;
    ensure!(all_numbers_finite(&gan_log) && all_numbers_finite(&vq_log), "a logged loss is not finite");
    let metrics = ok(std::fs::read_to_string(e2e.run.metrics()), "metrics")?;
    ensure!(metrics.lines().count() == 3 && all_numbers_finite(&metrics), "metrics report:\n{metrics}");
    let wav = ok(vqcpc_gan::dsp::load_clip(&e2e.root.join("generated.wav"), &vqcpc_gan::dsp::LoadOptions::new(e2e.cfg.sample_rate, None)), "generated audio")?;
    ensure!(wav.samples.len() == 4 * e2e.cfg.sample_rate as usize, "4 s request produced {} samples", wav.samples.len());
    let generated = metrics.lines().last().unwrap_or("").replace('\t', " ");
    Ok(format!("{:.1} min ({timing}); 1200 GAN steps finite; metrics: {generated}", total / 60.0))
}

fn sine(freq: f64, amp: f64, rate: u32) -> AudioClip {
    let n = rate as usize;
    AudioClip::new((0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()).collect(), rate)
}

fn criterion_8() -> Check {
    let cfg = RunConfig::desk();
    let mut worst: f64 = 1.0;
    for freq in [110.0, 440.0, 1000.0, 2500.0, 6000.0] {
        let x = sine(freq, 0.6, cfg.sample_rate);
        let spec = ok(stft_magif(&x, cfg.fft_size, cfg.overlap), "stft")?;
        let y = ok(invert_magif(&spec, cfg.fft_size, cfg.overlap), "inverse")?;
        let n = x.samples.len().min(y.samples.len());
        let dot: f64 = (0..n).map(|i| x.samples[i] * y.samples[i]).sum();
        let nx: f64 = x.samples[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = y.samples[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let corr = dot / (nx * ny);
        ensure!(corr > 0.9, "{freq} Hz round trip correlation {corr:.4}");
        worst = worst.min(corr);
    }
    let c = ok(cqt(&sine(440.0, 0.5, cfg.sample_rate), cfg.cqt_octaves, cfg.cqt_bins_per_octave, cfg.hop_size()), "cqt")?;
    ensure!((c.bins, c.frames) == (144, 32), "CQT grid {} x {}", c.bins, c.frames);
    Ok(format!("worst sinusoid correlation {worst:.4}; CQT grid 144 x 32"))
}

fn criterion_9(e2e: &E2e) -> Check {
    e2e.require()?;
    let phase1 = ok(progressive_schedule(&e2e.cfg), "schedule")?[0].iterations;
    let root = e2e.root.join("repeat");
    let run_b = root.join("run");
    let (_, failure) = run_stages(&root, &run_b, &pipeline_stages(&e2e.root.join("corpus"), Path::new(""), Some(phase1)));
    if let Some(f) = failure {
        return Err(format!("repeat run failed: {f}"));
    }
    let run_b = RunDir::new(run_b);
    let read = |p: PathBuf| ok(std::fs::read_to_string(&p), &p.display().to_string());
    ensure!(read(e2e.run.vqcpc_log())? == read(run_b.vqcpc_log())?, "encoder logs differ");
    let a: Vec<String> = read(e2e.run.gan_log())?.lines().take(1 + phase1).map(String::from).collect();
    let b: Vec<String> = read(run_b.gan_log())?.lines().map(String::from).collect();
    ensure!(b.len() == 1 + phase1, "repeat run logged {} GAN rows", b.len() - 1);
    ensure!(a == b, "first-phase GAN logs differ");

    let gen = |run: &RunDir, ckpt: &Path, out: &str| {
        let out = e2e.root.join(out);
        cli(
            &run.root,
            &["generate", "--pitch", "55", "--duration", "2", "--tokens", "const:5", "--z-seed", "3", "--checkpoint", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()],
        )?;
        ok(std::fs::read(&out), "generated audio")
    };
    let phase_ckpt = |run: &RunDir| run.checkpoints().join("gan_scale1.ckpt");
    let a1 = gen(&e2e.run, &phase_ckpt(&e2e.run), "det_a1.wav")?;
    let b1 = gen(&run_b, &phase_ckpt(&run_b), "det_b1.wav")?;
    ensure!(a1 == b1, "phase-1 generators of the two runs synthesize different audio");
    let f1 = gen(&e2e.run, &e2e.run.gan(), "det_f1.wav")?;
    let f2 = gen(&e2e.run, &e2e.run.gan(), "det_f2.wav")?;
    ensure!(f1 == f2, "repeated generation differs");
    Ok(format!("encoder logs and {phase1} GAN rows identical; phase-1 and final audio bitwise identical"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    // `cargo test` passes harness flags; a filter that excludes this target
    // (e.g. `cargo test -- some_unit_test`) skips the run.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) || std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let dir = tempfile::Builder::new().prefix("vqcpc-gan-acceptance").tempdir().expect("temp dir");
    println!("acceptance criteria");
    let e2e = end_to_end(dir.path());
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "InfoNCE oracle and toy encoder run", Box::new(|| criterion_1(&e2e))),
        (2, "VQ contracts", Box::new(criterion_2)),
        (3, "gradient checks", Box::new(criterion_3)),
        (4, "variable-length contract", Box::new(|| criterion_4(&e2e))),
        (5, "WGAN-GP oracles", Box::new(criterion_5)),
        (6, "metric oracles", Box::new(|| criterion_6(&e2e))),
        (7, "end-to-end desk smoke", Box::new(|| criterion_7(&e2e))),
        (8, "DSP round trip", Box::new(criterion_8)),
        (9, "determinism", Box::new(|| criterion_9(&e2e))),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS  {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id}: FAIL  {name} ({secs:.1} s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
