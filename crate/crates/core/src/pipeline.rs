//! Run-directory stages shared by the command-line tool and the end-to-end
//! tests.
//!
//! ```text
//! <run>/config.toml            resolved configuration snapshot
//! <run>/data/{train,test}.tsv  manifests
//! <run>/data/features/         <id>.spec (STFT mag/IF) and <id>.cqt
//! <run>/data/tokens_*.tok      encoder tokens per split
//! <run>/checkpoints/           encoder.ckpt, gan.ckpt, gan_scale<k>.ckpt, inception.ckpt
//! <run>/logs/                  vqcpc.tsv, train.tsv
//! <run>/reports/metrics.tsv
//! ```
//!
//! Each stage refuses to overwrite its outputs unless forced, except GAN
//! training, which resumes from the latest checkpoint.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::dsp::{
    cqt, filter_dataset, invert_magif, load_clip, split_dataset, stft_magif, write_wav, CqtSequence, DatasetManifest,
    LoadOptions, SpectroTensor,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, train_inception, InceptionCheckpoint, InceptionConfig, InceptionReport, LabeledSpectro, MetricReport,
};
use crate::fsutil;
use crate::train::{train_gan, GanDataset, GanExample, GanLogRow, GanRunOptions, GeneratorCheckpoint, LATEST_CHECKPOINT};
use crate::vqcpc::{
    codebook_perplexity, extract_tokens, read_token_file, train_vqcpc, write_token_file, EncoderCheckpoint, FeatureSet,
    TokenSequence, VqcpcLogRow,
};

const Z_SEED_SALT: u64 = 0x2a5e_ed00;

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn manifest(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.tsv"))
    }
    pub fn spectro(&self, source_id: &str) -> PathBuf {
        self.root.join("data/features").join(format!("{source_id}.spec"))
    }
    pub fn cqt(&self, source_id: &str) -> PathBuf {
        self.root.join("data/features").join(format!("{source_id}.cqt"))
    }
    pub fn tokens(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("tokens_{split}.tok"))
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn encoder(&self) -> PathBuf {
        self.checkpoints().join("encoder.ckpt")
    }
    pub fn gan(&self) -> PathBuf {
        self.checkpoints().join(LATEST_CHECKPOINT)
    }
    pub fn inception(&self) -> PathBuf {
        self.checkpoints().join("inception.ckpt")
    }
    pub fn vqcpc_log(&self) -> PathBuf {
        self.root.join("logs/vqcpc.tsv")
    }
    pub fn gan_log(&self) -> PathBuf {
        self.root.join("logs/train.tsv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("reports/metrics.tsv")
    }

    /// The configuration stored in the run, if any.
    pub fn stored_config(&self) -> Result<Option<RunConfig>> {
        let path = self.config();
        if path.exists() {
            RunConfig::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Records `cfg` as the run's configuration. A run already holding a
    /// different configuration is only rewritten when `force` is set.
    pub fn bind_config(&self, cfg: &RunConfig, force: bool) -> Result<()> {
        if let Some(existing) = self.stored_config()? {
            if existing.fingerprint() == cfg.fingerprint() {
                return Ok(());
            }
            if !force {
                return Err(Error::Config(format!(
                    "{} holds a different configuration (pass --force to replace it)",
                    self.config().display()
                )));
            }
        }
        fsutil::write_atomic(&self.config(), cfg.to_toml().as_bytes())
    }
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        Err(Error::Exists(path.to_path_buf()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub train: usize,
    pub test: usize,
    pub pitches: Vec<u8>,
    pub families: Vec<String>,
}

/// Scans `audio_dir`, filters by pitch, splits, and writes manifests plus
/// STFT and CQT features for every clip.
pub fn prepare(run: &RunDir, cfg: &RunConfig, audio_dir: &Path, resample: bool, force: bool) -> Result<PrepareSummary> {
    refuse_existing(&run.manifest("train"), force)?;
    let all = DatasetManifest::scan_nsynth_dir(audio_dir)?;
    let kept = filter_dataset(&all, cfg.pitch_min, cfg.pitch_max)?;
    let (train, test) = split_dataset(&kept, cfg.train_fraction, cfg.seed)?;
    let opts = LoadOptions {
        resample,
        ..LoadOptions::new(cfg.sample_rate, Some(cfg.clip_samples))
    };
    for (i, e) in kept.entries.iter().enumerate() {
        let clip = load_clip(&e.path, &opts)?;
        let spec = stft_magif(&clip, cfg.fft_size, cfg.overlap)?;
        let frames = spec.frames;
        spec.save(&run.spectro(&e.source_id))?;
        cqt(&clip, cfg.cqt_octaves, cfg.cqt_bins_per_octave, cfg.hop_size())?
            .reconcile(frames)
            .save(&run.cqt(&e.source_id))?;
        if (i + 1) % 16 == 0 || i + 1 == kept.len() {
            log::info!("features for {}/{} clips", i + 1, kept.len());
        }
    }
    test.save(&run.manifest("test"))?;
    train.save(&run.manifest("train"))?;
    Ok(PrepareSummary {
        train: train.len(),
        test: test.len(),
        pitches: kept.pitches(),
        families: kept.families(),
    })
}

fn load_manifest(run: &RunDir, split: &str) -> Result<DatasetManifest> {
    let path = run.manifest(split);
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run `prepare` first)", path.display())));
    }
    DatasetManifest::load(&path)
}

fn encoder_features(run: &RunDir, manifest: &DatasetManifest) -> Result<Vec<Vec<f64>>> {
    manifest
        .entries
        .iter()
        .map(|e| Ok(CqtSequence::load(&run.cqt(&e.source_id))?.unit_db_features()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderSummary {
    pub steps: usize,
    /// Mean InfoNCE over the last tenth of training.
    pub final_infonce: f64,
    /// Chance-level InfoNCE, `K ln(N + 1)`.
    pub chance_infonce: f64,
    /// Perplexity of the token histogram over the whole training split.
    pub perplexity: f64,
}

pub const VQCPC_LOG_HEADER: &str = "step\ttotal\tinfonce\tvq\tcommit\tperplexity";

fn vqcpc_row(r: &VqcpcLogRow) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.step, r.parts.total, r.parts.infonce, r.parts.vq, r.parts.commit, r.perplexity
    )
}

pub fn train_encoder(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<EncoderSummary> {
    refuse_existing(&run.encoder(), force)?;
    let manifest = load_manifest(run, "train")?;
    let clips = encoder_features(run, &manifest)?;
    let data = FeatureSet {
        clips: &clips,
        frames: cfg.frames(),
        bins: cfg.cqt_octaves * cfg.cqt_bins_per_octave,
    };
    let model_cfg = cfg.vqcpc_model();
    let train_cfg = cfg.vqcpc_training();
    let mut log = String::from(VQCPC_LOG_HEADER);
    log.push('\n');
    let mut infonce = Vec::with_capacity(train_cfg.steps);
    let model = train_vqcpc(&data, &model_cfg, &train_cfg, |r| {
        let _ = writeln!(log, "{}", vqcpc_row(r));
        infonce.push(r.parts.infonce);
        if (r.step + 1) % 100 == 0 {
            log::info!("encoder step {}: InfoNCE {:.4}, perplexity {:.2}", r.step + 1, r.parts.infonce, r.perplexity);
        }
    })?;
    fsutil::write_atomic(&run.vqcpc_log(), log.as_bytes())?;
    let tail = (infonce.len() / 10).max(1).min(infonce.len());
    let final_infonce = if infonce.is_empty() {
        f64::NAN
    } else {
        infonce[infonce.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let tokens: Vec<Vec<u8>> = clips.iter().map(|c| extract_tokens(&model, c)).collect::<Result<_>>()?;
    let summary = EncoderSummary {
        steps: train_cfg.steps,
        final_infonce,
        chance_infonce: model_cfg.prediction_steps as f64 * ((model_cfg.negatives + 1) as f64).ln(),
        perplexity: codebook_perplexity(tokens.iter().map(Vec::as_slice)),
    };
    EncoderCheckpoint {
        model,
        fingerprint: cfg.fingerprint(),
        steps: train_cfg.steps,
    }
    .save(&run.encoder())?;
    Ok(summary)
}

/// Writes token files for both splits; returns the training split's
/// codebook perplexity.
pub fn encode(run: &RunDir, force: bool) -> Result<f64> {
    refuse_existing(&run.tokens("train"), force)?;
    let encoder = load_encoder(run)?;
    let mut perplexity = 0.0;
    for split in ["test", "train"] {
        let manifest = load_manifest(run, split)?;
        let feats = encoder_features(run, &manifest)?;
        let seqs: Vec<TokenSequence> = manifest
            .entries
            .iter()
            .zip(&feats)
            .map(|(e, f)| {
                Ok(TokenSequence {
                    source_id: e.source_id.clone(),
                    pitch: e.pitch,
                    tokens: extract_tokens(&encoder.model, f)?,
                })
            })
            .collect::<Result<_>>()?;
        perplexity = codebook_perplexity(seqs.iter().map(|s| s.tokens.as_slice()));
        write_token_file(&run.tokens(split), &seqs)?;
    }
    Ok(perplexity)
}

fn load_encoder(run: &RunDir) -> Result<EncoderCheckpoint> {
    let path = run.encoder();
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run `train-vqcpc` first)", path.display())));
    }
    EncoderCheckpoint::load(&path)
}

/// Real clips of one split with their spectrograms and tokens.
pub fn load_examples(run: &RunDir, split: &str) -> Result<Vec<GanExample>> {
    let manifest = load_manifest(run, split)?;
    let tok_path = run.tokens(split);
    if !tok_path.exists() {
        return Err(Error::Missing(format!("{} (run `encode` first)", tok_path.display())));
    }
    let mut tokens: HashMap<String, Vec<u8>> =
        read_token_file(&tok_path)?.into_iter().map(|s| (s.source_id, s.tokens)).collect();
    manifest
        .entries
        .iter()
        .map(|e| {
            let t = tokens
                .remove(&e.source_id)
                .ok_or_else(|| Error::Missing(format!("tokens for {} in {}", e.source_id, tok_path.display())))?;
            Ok(GanExample {
                source_id: e.source_id.clone(),
                pitch: e.pitch,
                spectro: SpectroTensor::load(&run.spectro(&e.source_id))?,
                tokens: t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanSummary {
    pub steps: usize,
    pub finished: bool,
    pub last: Option<GanLogRow>,
}

/// Trains (or resumes) the GAN. With `force`, earlier progress is discarded.
pub fn train_gan_stage(run: &RunDir, cfg: &RunConfig, force: bool, stop_after: Option<usize>) -> Result<GanSummary> {
    let data = GanDataset::new(load_examples(run, "train")?)?;
    let opts = GanRunOptions {
        checkpoint_dir: run.checkpoints(),
        log_path: run.gan_log(),
        resume: !force,
        stop_after,
    };
    let mut last = None;
    let trainer = train_gan(&data, cfg, &opts, |row| {
        last = Some(*row);
        if (row.step + 1) % 25 == 0 {
            log::info!(
                "gan step {} scale {} alpha {:.2}: D {:.4} G {:.4}",
                row.step + 1,
                row.scale,
                row.alpha,
                row.report.d_total,
                row.report.g_total
            );
        }
    })?;
    Ok(GanSummary {
        steps: trainer.cursor.step,
        finished: trainer.finished(),
        last,
    })
}

/// Where generation takes its token sequence from.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenSource {
    /// First sequence of a token file, or the one whose id matches.
    File { path: PathBuf, source_id: Option<String> },
    /// Tokens extracted from a wave file with the run's encoder.
    Reference(PathBuf),
    Constant(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub pitch: u8,
    pub duration: f64,
    pub tokens: TokenSource,
    pub z_seed: u64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub source_tokens: Vec<u8>,
    pub frames: usize,
    pub samples: Vec<f64>,
}

/// Frames for a duration: `round(duration * frame_rate)`, so 0.5/1/2/4 s
/// give 16/32/64/128 frames at the default geometry.
pub fn frames_for_duration(cfg: &RunConfig, duration: f64) -> Result<usize> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    let frames = (duration * cfg.frame_rate()).round() as usize;
    if frames == 0 {
        return Err(Error::invalid(format!("{duration} s is shorter than one frame")));
    }
    Ok(frames)
}

fn resolve_tokens(run: &RunDir, cfg: &RunConfig, source: &TokenSource) -> Result<Vec<u8>> {
    match source {
        TokenSource::Constant(t) => {
            if *t as usize >= cfg.vqcpc_codebook_size {
                return Err(Error::invalid(format!("token {t} outside codebook of {}", cfg.vqcpc_codebook_size)));
            }
            Ok(vec![*t])
        }
        TokenSource::File { path, source_id } => {
            let seqs = read_token_file(path)?;
            let seq = match source_id {
                Some(id) => seqs.into_iter().find(|s| &s.source_id == id),
                None => seqs.into_iter().next(),
            };
            seq.map(|s| s.tokens)
                .ok_or_else(|| Error::Missing(format!("token sequence in {}", path.display())))
        }
        TokenSource::Reference(wav) => {
            let encoder = load_encoder(run)?;
            let clip = load_clip(wav, &LoadOptions::new(cfg.sample_rate, None))?;
            let frames = clip.samples.len().div_ceil(cfg.hop_size()).max(1);
            let feats = cqt(&clip, cfg.cqt_octaves, cfg.cqt_bins_per_octave, cfg.hop_size())?
                .reconcile(frames)
                .unit_db_features();
            extract_tokens(&encoder.model, &feats)
        }
    }
}

/// Synthesizes one clip; the audio has `round(duration * sample_rate)`
/// samples.
pub fn generate(run: &RunDir, cfg: &RunConfig, req: &GenerateRequest) -> Result<Generated> {
    let ckpt_path = req.checkpoint.clone().unwrap_or_else(|| run.gan());
    if !ckpt_path.exists() {
        return Err(Error::Missing(format!("{} (run `train-gan` first)", ckpt_path.display())));
    }
    let generator = GeneratorCheckpoint::load(&ckpt_path)?;
    let frames = frames_for_duration(cfg, req.duration)?;
    let source_tokens = resolve_tokens(run, cfg, &req.tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.z_seed ^ Z_SEED_SALT);
    let z: Vec<f64> = (0..generator.generator.config.noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let spec = generator.synthesize(req.pitch, &source_tokens, frames, &z)?;
    let mut samples = invert_magif(&spec, cfg.fft_size, cfg.overlap)?.samples;
    samples.resize((req.duration * cfg.sample_rate as f64).round() as usize, 0.0);
    Ok(Generated {
        source_tokens,
        frames,
        samples,
    })
}

pub fn generate_to_file(run: &RunDir, cfg: &RunConfig, req: &GenerateRequest, out: &Path, force: bool) -> Result<Generated> {
    refuse_existing(out, force)?;
    let g = generate(run, cfg, req)?;
    write_wav(out, &g.samples, cfg.sample_rate)?;
    Ok(g)
}

fn labelled(examples: &[GanExample], manifest: &DatasetManifest) -> Vec<LabeledSpectro> {
    let family: HashMap<&str, &str> = manifest.entries.iter().map(|e| (e.source_id.as_str(), e.family.as_str())).collect();
    examples
        .iter()
        .map(|e| LabeledSpectro {
            spectro: e.spectro.clone(),
            pitch: e.pitch,
            family: family.get(e.source_id.as_str()).copied().unwrap_or_default().to_string(),
        })
        .collect()
}

/// Trains the embedding classifier on the training split (held-out: test).
pub fn train_classifier(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<InceptionReport> {
    refuse_existing(&run.inception(), force)?;
    let train_m = load_manifest(run, "train")?;
    let test_m = load_manifest(run, "test")?;
    let mut families = train_m.families();
    families.extend(test_m.families());
    families.sort();
    families.dedup();
    let train = labelled(&load_examples(run, "train")?, &train_m);
    let test = labelled(&load_examples(run, "test")?, &test_m);
    let config = InceptionConfig {
        freq_bins: cfg.fft_size / 2,
        embed_dim: cfg.inception_embed_dim,
        pitches: (cfg.pitch_min..=cfg.pitch_max).collect(),
        families,
    };
    let (model, report) = train_inception(&config, &train, &test, &cfg.inception_training())?;
    InceptionCheckpoint {
        model,
        report: Some(report),
    }
    .save(&run.inception())?;
    Ok(report)
}

/// Scores the latest generator (and the real test split against the real
/// training split as a reference row). Trains the classifier first if the
/// run has none.
pub fn evaluate_stage(run: &RunDir, cfg: &RunConfig, force: bool) -> Result<Vec<MetricReport>> {
    refuse_existing(&run.metrics(), force)?;
    if !run.inception().exists() {
        let r = train_classifier(run, cfg, false)?;
        log::info!(
            "classifier: held-out pitch accuracy {:.3}, family accuracy {:.3}",
            r.pitch_accuracy,
            r.family_accuracy
        );
    }
    let classifier = InceptionCheckpoint::load(&run.inception())?;
    let generator = GeneratorCheckpoint::load(&run.gan())?;
    let train = load_examples(run, "train")?;
    let test = load_examples(run, "test")?;
    let fingerprint = classifier.fingerprint();
    let train_emb = classifier.model.embed(&train.iter().map(|e| e.spectro.clone()).collect::<Vec<_>>())?;
    let test_emb = classifier.model.embed(&test.iter().map(|e| e.spectro.clone()).collect::<Vec<_>>())?;
    let reports = vec![
        MetricReport::compare("real", &train_emb, &test_emb, &fingerprint)?,
        evaluate(&generator, &test, &classifier, cfg.eval_samples, cfg.seed)?,
    ];
    let mut text = String::from(MetricReport::HEADER);
    text.push('\n');
    for r in &reports {
        text.push_str(&r.to_tsv());
        text.push('\n');
    }
    fsutil::write_atomic(&run.metrics(), text.as_bytes())?;
    Ok(reports)
}
