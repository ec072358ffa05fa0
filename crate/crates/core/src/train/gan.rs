//! Progressive WGAN-GP training with resumable checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use vqcpc_gan_autodiff::optim::Adam;
use vqcpc_gan_autodiff::{grad, no_grad, Tensor};

use super::schedule::{progressive_schedule, ScalePhase};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dsp::SpectroTensor;
use crate::error::{Error, Result};
use crate::gan::{
    assemble_input, discriminator_loss, resample_tokens, generator_loss, gradient_penalty_at, pitch_onehot, CriticEval, GanConfig,
    GanLossReport, Generator, GlobalCritic, GlobalOutput, Labels, LocalCritic, LocalOutput, LossWeights, PenaltyMode,
    ScaleConfig,
};

/// Offset mixed into the run seed so GAN draws differ from encoder draws.
const GAN_SEED_SALT: u64 = 0x6741_4e00;

pub const LATEST_CHECKPOINT: &str = "gan.ckpt";

/// One real training clip with its labels.
#[derive(Debug, Clone)]
pub struct GanExample {
    pub source_id: String,
    pub pitch: u8,
    /// Full-resolution `(2, F, L)` magnitude/IF grid.
    pub spectro: SpectroTensor,
    pub tokens: Vec<u8>,
}

pub struct GanDataset {
    /// Sorted pitch vocabulary; a pitch's class is its index here.
    pub pitches: Vec<u8>,
    pub examples: Vec<GanExample>,
}

impl GanDataset {
    pub fn new(examples: Vec<GanExample>) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::EmptyDataset("no GAN training examples".into()))?;
        let shape = first.spectro.shape();
        if shape[0] != 2 {
            return Err(Error::Geometry(format!("expected 2-channel spectrograms, got {}", shape[0])));
        }
        for ex in &examples {
            if ex.spectro.shape() != shape {
                return Err(Error::Geometry(format!(
                    "{} has shape {:?}, expected {:?}",
                    ex.source_id,
                    ex.spectro.shape(),
                    shape
                )));
            }
            if ex.tokens.len() != shape[2] {
                return Err(Error::Geometry(format!(
                    "{} has {} tokens for {} frames",
                    ex.source_id,
                    ex.tokens.len(),
                    shape[2]
                )));
            }
        }
        let mut pitches: Vec<u8> = examples.iter().map(|e| e.pitch).collect();
        pitches.sort_unstable();
        pitches.dedup();
        Ok(GanDataset { pitches, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn freq_bins(&self) -> usize {
        self.examples[0].spectro.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.examples[0].spectro.frames
    }

    pub fn pitch_index(&self, pitch: u8) -> Option<usize> {
        self.pitches.binary_search(&pitch).ok()
    }
}

/// Generator and both critics.
pub struct GanModels {
    pub config: GanConfig,
    pub generator: Generator,
    pub local: LocalCritic,
    pub global: GlobalCritic,
}

impl GanModels {
    pub fn new(config: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(GanModels {
            config: config.clone(),
            generator: Generator::new(config, rng)?,
            local: LocalCritic::new(config, rng)?,
            global: GlobalCritic::new(config, rng)?,
        })
    }

    fn critic_vars(&self) -> Vec<vqcpc_gan_autodiff::nn::Var> {
        let mut v = self.local.vs.vars();
        v.extend(self.global.vs.vars());
        v
    }
}

/// Position in the schedule: `step` counts completed iterations overall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainCursor {
    pub phase: usize,
    pub iteration: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLogRow {
    pub step: usize,
    pub scale: usize,
    pub alpha: f64,
    pub report: GanLossReport,
}

impl GanLogRow {
    pub const HEADER: &'static str = "step\tscale\talpha\tw_local\tw_global\tgp_local\tgp_global\tce_token\tce_pitch\tg_total\td_total";

    pub fn to_tsv(&self) -> String {
        let r = &self.report;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.scale, self.alpha, r.w_local, r.w_global, r.gp_local, r.gp_global, r.ce_token, r.ce_pitch, r.g_total, r.d_total
        )
    }
}

struct Batch {
    real: Tensor,
    cond: Tensor,
    pitch: Vec<usize>,
    tokens: Vec<usize>,
}

/// Holds everything that changes during training.
pub struct GanTrainer<'a> {
    cfg: &'a RunConfig,
    data: &'a GanDataset,
    pub schedule: Vec<ScalePhase>,
    /// Real data per scale, coarsest first; each clip is `2 * F_s * L` values.
    pyramid: Vec<Vec<f64>>,
    pub models: GanModels,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    pub cursor: TrainCursor,
    weights: LossWeights,
}

impl<'a> GanTrainer<'a> {
    pub fn new(data: &'a GanDataset, cfg: &'a RunConfig) -> Result<Self> {
        let gan_cfg = cfg.gan_model(data.pitches.len());
        gan_cfg.validate()?;
        if data.freq_bins() != gan_cfg.final_freq() || data.frames() != gan_cfg.frames {
            return Err(Error::Geometry(format!(
                "data is {} bins x {} frames, model expects {} x {}",
                data.freq_bins(),
                data.frames(),
                gan_cfg.final_freq(),
                gan_cfg.frames
            )));
        }
        if data.examples.iter().any(|e| e.tokens.iter().any(|&t| t as usize >= gan_cfg.codebook_size)) {
            return Err(Error::invalid("token outside the configured codebook"));
        }
        let schedule = progressive_schedule(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ GAN_SEED_SALT);
        let models = GanModels::new(&gan_cfg, &mut rng)?;
        let pyramid = build_pyramid(data, gan_cfg.n_scales())?;
        let opt_g = Adam::new(models.generator.vs.vars(), cfg.gan_learning_rate, cfg.gan_beta1, cfg.gan_beta2);
        let opt_d = Adam::new(models.critic_vars(), cfg.gan_learning_rate, cfg.gan_beta1, cfg.gan_beta2);
        let mut t = GanTrainer {
            cfg,
            data,
            schedule,
            pyramid,
            models,
            opt_g,
            opt_d,
            rng,
            cursor: TrainCursor::default(),
            weights: cfg.loss_weights(),
        };
        t.skip_empty_phases();
        Ok(t)
    }

    /// Continues from a checkpoint written by [`GanTrainer::save`].
    pub fn resume(data: &'a GanDataset, cfg: &'a RunConfig, path: &Path) -> Result<Self> {
        let mut t = Self::new(data, cfg)?;
        let ck = Checkpoint::load(path)?;
        let meta = &ck.metadata;
        if meta["kind"] != "gan" {
            return Err(Error::format(path, "not a GAN checkpoint"));
        }
        if meta["fingerprint"] != cfg.fingerprint().as_str() {
            return Err(Error::Config(format!("{} was written under a different configuration", path.display())));
        }
        if meta["pitches"] != json!(data.pitches) {
            return Err(Error::Config(format!("{} was trained on a different pitch set", path.display())));
        }
        t.models.restore(&ck)?;
        ck.restore_adam("opt_g", &mut t.opt_g)?;
        ck.restore_adam("opt_d", &mut t.opt_d)?;
        let field = |k: &str| meta[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::format(path, format!("missing {k}")));
        t.cursor = TrainCursor {
            phase: field("phase")?,
            iteration: field("iteration")?,
            step: field("step")?,
        };
        let pos: u128 = meta["rng_word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "missing RNG position"))?;
        t.rng.set_word_pos(pos);
        Ok(t)
    }

    pub fn finished(&self) -> bool {
        self.cursor.phase >= self.schedule.len()
    }

    /// Scale and fade weight the next step trains at (the final scale once done).
    pub fn current_scale(&self) -> ScaleConfig {
        match self.schedule.get(self.cursor.phase) {
            Some(p) => ScaleConfig::new(p.scale_index, p.alpha(self.cursor.iteration)),
            None => ScaleConfig::stable(self.schedule.last().map_or(1, |p| p.scale_index)),
        }
    }

    fn skip_empty_phases(&mut self) {
        while let Some(p) = self.schedule.get(self.cursor.phase) {
            if self.cursor.iteration < p.iterations {
                break;
            }
            self.cursor.phase += 1;
            self.cursor.iteration = 0;
        }
    }

    fn sample_batch(&mut self, size: usize, scale: ScaleConfig) -> Result<Batch> {
        let cfg = &self.models.config;
        let frames = cfg.frames;
        let idx: Vec<usize> = (0..size).map(|_| self.rng.random_range(0..self.data.len())).collect();
        let gather = |s: usize| {
            let per = 2 * cfg.freq_at(s) * frames;
            let data: Vec<f64> = idx.iter().flat_map(|&i| self.pyramid[s - 1][i * per..(i + 1) * per].iter().copied()).collect();
            Tensor::from_vec(data, &[size, 2, cfg.freq_at(s), frames])
        };
        let mut real = gather(scale.index);
        if scale.fading() {
            let prev = gather(scale.index - 1).upsample_nearest(2, 2);
            real = &real.scale(scale.alpha) + &prev.scale(1.0 - scale.alpha);
        }
        let mut cond = Vec::with_capacity(size * cfg.cond_channels() * frames);
        let mut pitch = Vec::with_capacity(size);
        let mut tokens = Vec::with_capacity(size * frames);
        for &i in &idx {
            let ex = &self.data.examples[i];
            let p = self.data.pitch_index(ex.pitch).expect("vocabulary built from the same examples");
            let z: Vec<f64> = (0..cfg.noise_dim).map(|_| self.rng.sample(StandardNormal)).collect();
            cond.extend(assemble_input(&z, &pitch_onehot(p, cfg.pitch_classes), &ex.tokens, cfg.codebook_size)?);
            pitch.push(p);
            tokens.extend(ex.tokens.iter().map(|&t| t as usize));
        }
        Ok(Batch {
            real,
            cond: Tensor::from_vec(cond, &[size, cfg.cond_channels(), 1, frames]),
            pitch,
            tokens,
        })
    }

    fn critic_update(&mut self, batch: &Batch, scale: ScaleConfig) -> Result<GanLossReport> {
        let m = &self.models;
        let b = batch.pitch.len();
        let l = m.config.frames;
        let fake = no_grad(|| m.generator.forward(&batch.cond, scale))?;
        let both = Tensor::concat(&[batch.real.clone(), fake.clone()], 0);
        let local = m.local.forward(&both, scale)?;
        let global = m.global.forward(&both, scale)?;
        let split = |start: usize| CriticEval {
            local: LocalOutput {
                scores: local.scores.narrow(0, start, b),
                token_logits: local.token_logits.narrow(0, start * l, b * l),
            },
            global: GlobalOutput {
                scores: global.scores.narrow(0, start, b),
                pitch_logits: global.pitch_logits.narrow(0, start, b),
            },
        };
        let u: Vec<f64> = (0..b).map(|_| self.rng.random::<f64>()).collect();
        let gp_l = gradient_penalty_at(|x| Ok(m.local.forward(x, scale)?.scores), &batch.real, &fake, &u, PenaltyMode::PerFrame)?;
        let gp_g = gradient_penalty_at(|x| Ok(m.global.forward(x, scale)?.scores), &batch.real, &fake, &u, PenaltyMode::Global)?;
        let labels = Labels {
            pitch: &batch.pitch,
            tokens: &batch.tokens,
        };
        let (loss, report) = discriminator_loss(&split(0), &split(b), labels, labels, &gp_l, &gp_g, &self.weights)?;
        if !report.all_finite() {
            return Err(Error::Diverged(format!("critic loss became {} at step {}", report.d_total, self.cursor.step)));
        }
        let grads = grad(&[loss], &self.opt_d.tensors(), false);
        self.opt_d.step(&grads);
        Ok(report)
    }

    fn generator_update(&mut self, batch: &Batch, scale: ScaleConfig) -> Result<f64> {
        let m = &self.models;
        let fake = m.generator.forward(&batch.cond, scale)?;
        let eval = CriticEval {
            local: m.local.forward(&fake, scale)?,
            global: m.global.forward(&fake, scale)?,
        };
        let labels = Labels {
            pitch: &batch.pitch,
            tokens: &batch.tokens,
        };
        let loss = generator_loss(&eval, labels, &self.weights)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("generator loss became {value} at step {}", self.cursor.step)));
        }
        let grads = grad(&[loss], &self.opt_g.tensors(), false);
        self.opt_g.step(&grads);
        Ok(value)
    }

    /// One iteration: `gan_d_steps` critic updates, then one generator update.
    pub fn step(&mut self) -> Result<GanLogRow> {
        let phase = *self
            .schedule
            .get(self.cursor.phase)
            .ok_or_else(|| Error::invalid("schedule already complete"))?;
        let scale = ScaleConfig::new(phase.scale_index, phase.alpha(self.cursor.iteration));
        let mut batch = self.sample_batch(phase.batch_size, scale)?;
        let mut report = self.critic_update(&batch, scale)?;
        for _ in 1..self.cfg.gan_d_steps {
            batch = self.sample_batch(phase.batch_size, scale)?;
            report = self.critic_update(&batch, scale)?;
        }
        report.g_total = self.generator_update(&batch, scale)?;
        let row = GanLogRow {
            step: self.cursor.step,
            scale: scale.index,
            alpha: scale.alpha,
            report,
        };
        self.cursor.step += 1;
        self.cursor.iteration += 1;
        self.skip_empty_phases();
        Ok(row)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let scale = self.current_scale();
        let mut ck = Checkpoint::new(json!({
            "kind": "gan",
            "fingerprint": self.cfg.fingerprint(),
            "config": self.models.config,
            "pitches": self.data.pitches,
            "phase": self.cursor.phase,
            "iteration": self.cursor.iteration,
            "step": self.cursor.step,
            "scale_index": scale.index,
            "fade_alpha": scale.alpha,
            "rng_word_pos": self.rng.get_word_pos().to_string(),
        }));
        self.models.push(&mut ck);
        ck.push_adam("opt_g", &self.opt_g);
        ck.push_adam("opt_d", &self.opt_d);
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

impl GanModels {
    fn push(&self, ck: &mut Checkpoint) {
        ck.push_vars("g", &self.generator.vs);
        ck.push_vars("dl", &self.local.vs);
        ck.push_vars("dg", &self.global.vs);
    }

    fn restore(&self, ck: &Checkpoint) -> Result<()> {
        ck.restore_vars("g", &self.generator.vs)?;
        ck.restore_vars("dl", &self.local.vs)?;
        ck.restore_vars("dg", &self.global.vs)
    }
}

fn build_pyramid(data: &GanDataset, n_scales: usize) -> Result<Vec<Vec<f64>>> {
    (1..=n_scales)
        .map(|s| {
            let factor = 1 << (n_scales - s);
            let mut out = Vec::new();
            for ex in &data.examples {
                out.extend(ex.spectro.downscale_freq(factor)?.data);
            }
            Ok(out)
        })
        .collect()
}

/// Generator side of a GAN checkpoint, for synthesis and evaluation.
pub struct GeneratorCheckpoint {
    pub generator: Generator,
    pub pitches: Vec<u8>,
    pub scale: ScaleConfig,
    pub fingerprint: String,
    pub step: usize,
}

impl GeneratorCheckpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = &ck.metadata;
        if meta["kind"] != "gan" {
            return Err(Error::format(path, "not a GAN checkpoint"));
        }
        let config: GanConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| Error::format(path, format!("bad GAN config: {e}")))?;
        let pitches: Vec<u8> =
            serde_json::from_value(meta["pitches"].clone()).map_err(|e| Error::format(path, format!("bad pitch list: {e}")))?;
        let generator = Generator::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ck.restore_vars("g", &generator.vs)?;
        let index = meta["scale_index"].as_u64().ok_or_else(|| Error::format(path, "missing scale"))? as usize;
        let alpha = meta["fade_alpha"].as_f64().ok_or_else(|| Error::format(path, "missing fade alpha"))?;
        Ok(GeneratorCheckpoint {
            generator,
            pitches,
            scale: ScaleConfig::new(index, alpha),
            fingerprint: meta["fingerprint"].as_str().unwrap_or_default().to_string(),
            step: meta["step"].as_u64().unwrap_or(0) as usize,
        })
    }

    pub fn pitch_index(&self, pitch: u8) -> Option<usize> {
        self.pitches.binary_search(&pitch).ok()
    }

    /// Full-resolution `(2, F, frames)` spectrogram for one request. Tokens
    /// are resampled to `frames`; a checkpoint saved mid-schedule has its
    /// coarser output repeated along frequency up to the final grid.
    pub fn synthesize(&self, pitch: u8, tokens: &[u8], frames: usize, z: &[f64]) -> Result<SpectroTensor> {
        let cfg = &self.generator.config;
        let p = self
            .pitch_index(pitch)
            .ok_or_else(|| Error::invalid(format!("pitch {pitch} is not in the trained range {:?}", self.pitches)))?;
        if frames == 0 {
            return Err(Error::invalid("cannot synthesize zero frames"));
        }
        let tokens = resample_tokens(tokens, frames);
        let cond = assemble_input(z, &pitch_onehot(p, cfg.pitch_classes), &tokens, cfg.codebook_size)?;
        let cond = Tensor::from_vec(cond, &[1, cfg.cond_channels(), 1, frames]);
        let mut out = no_grad(|| self.generator.forward(&cond, self.scale))?;
        let factor = cfg.final_freq() / cfg.freq_at(self.scale.index);
        if factor > 1 {
            out = out.upsample_nearest(2, factor);
        }
        SpectroTensor::new(2, cfg.final_freq(), frames, out.data().to_vec())
    }
}

/// Where a GAN run keeps its checkpoints and step log.
pub struct GanRunOptions {
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    pub resume: bool,
    /// Stop (with a checkpoint) once this many steps have run overall.
    pub stop_after: Option<usize>,
}

/// Runs (or continues) the whole schedule. The latest state is checkpointed
/// every `gan_checkpoint_interval` steps and at every phase boundary; a
/// diverged step returns an error and leaves the last good checkpoint alone.
pub fn train_gan<'a>(
    data: &'a GanDataset,
    cfg: &'a RunConfig,
    opts: &GanRunOptions,
    mut on_log: impl FnMut(&GanLogRow),
) -> Result<GanTrainer<'a>> {
    let latest = opts.checkpoint_dir.join(LATEST_CHECKPOINT);
    let resuming = opts.resume && latest.exists();
    let mut trainer = if resuming {
        GanTrainer::resume(data, cfg, &latest)?
    } else {
        GanTrainer::new(data, cfg)?
    };
    let mut log = open_log(&opts.log_path, if resuming { Some(trainer.cursor.step) } else { None })?;
    if !resuming {
        trainer.save(&latest)?;
    }
    while !trainer.finished() {
        if opts.stop_after.is_some_and(|s| trainer.cursor.step >= s) {
            break;
        }
        let phase_before = trainer.cursor.phase;
        let row = trainer.step()?;
        writeln!(log, "{}", row.to_tsv()).map_err(|e| Error::io(&opts.log_path, e))?;
        on_log(&row);
        if trainer.cursor.phase != phase_before {
            trainer.save(&latest)?;
            let scale = trainer.schedule[phase_before].scale_index;
            trainer.save(&opts.checkpoint_dir.join(format!("gan_scale{scale}.ckpt")))?;
            log::info!("finished scale {scale} at step {}", trainer.cursor.step);
        } else if cfg.gan_checkpoint_interval > 0 && trainer.cursor.step % cfg.gan_checkpoint_interval == 0 {
            trainer.save(&latest)?;
        }
    }
    log.flush().map_err(|e| Error::io(&opts.log_path, e))?;
    trainer.save(&latest)?;
    Ok(trainer)
}

/// Opens the step log. When resuming at `keep_below`, rows written after
/// that checkpoint are dropped so the log matches the restored state.
fn open_log(path: &Path, keep_below: Option<usize>) -> Result<std::fs::File> {
    let mut kept = String::from(GanLogRow::HEADER);
    kept.push('\n');
    if let Some(limit) = keep_below {
        if let Ok(text) = std::fs::read_to_string(path) {
            for line in text.lines().skip(1) {
                let step = line.split('\t').next().and_then(|s| s.parse::<usize>().ok());
                if step.is_some_and(|s| s < limit) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    crate::fsutil::write_atomic(path, kept.as_bytes())?;
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}
