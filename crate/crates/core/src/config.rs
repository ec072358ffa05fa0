//! Run configuration: one flat key/value table covering every stage.
//!
//! Two presets exist. `full` carries the published-scale values; `desk`
//! shrinks iteration counts, batch sizes and channel widths so the whole
//! pipeline finishes on one CPU core in well under an hour. A config file
//! names its preset and overrides individual keys; `--set key=value` pairs
//! are applied on top. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::InceptionTrainConfig;
use crate::gan::{GanConfig, LossWeights};
use crate::vqcpc::{NegativeSharing, NegativeSource, VqcpcConfig, VqcpcTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,

    // Data.
    pub sample_rate: u32,
    pub clip_samples: usize,
    pub pitch_min: u8,
    pub pitch_max: u8,
    pub train_fraction: f64,
    pub fft_size: usize,
    pub overlap: f64,
    pub cqt_octaves: usize,
    pub cqt_bins_per_octave: usize,

    // Token encoder.
    pub vqcpc_encoder_channels: Vec<usize>,
    pub vqcpc_codebook_size: usize,
    pub vqcpc_gru_hidden: usize,
    pub vqcpc_gru_layers: usize,
    pub vqcpc_context_dim: usize,
    pub vqcpc_prediction_steps: usize,
    pub vqcpc_negatives: usize,
    pub vqcpc_commitment_beta: f64,
    pub vqcpc_negative_sharing: NegativeSharing,
    pub vqcpc_negative_source: NegativeSource,
    pub vqcpc_normalize_embeddings: bool,
    pub vqcpc_steps: usize,
    pub vqcpc_batch_size: usize,
    pub vqcpc_learning_rate: f64,
    pub vqcpc_final_lr_fraction: f64,
    pub vqcpc_kmeans_clips: usize,
    pub vqcpc_kmeans_iters: usize,
    pub vqcpc_dead_code_interval: usize,

    // GAN.
    pub gan_noise_dim: usize,
    pub gan_base_freq: usize,
    /// Per-scale widths before division by `gan_feature_divisor`.
    pub gan_feature_maps: Vec<usize>,
    pub gan_feature_divisor: usize,
    pub gan_global_hidden: usize,
    pub gan_iterations_per_scale: usize,
    pub gan_iteration_divisor: usize,
    pub gan_batch_sizes: Vec<usize>,
    pub gan_batch_divisor: usize,
    /// Fraction of each phase spent fading the new scale in.
    pub gan_fade_fraction: f64,
    pub gan_d_steps: usize,
    pub gan_learning_rate: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub gan_gp_lambda: f64,
    pub gan_ce_weight: f64,
    pub gan_drift: f64,
    pub gan_checkpoint_interval: usize,

    // Evaluation.
    pub inception_steps: usize,
    pub inception_batch_size: usize,
    pub inception_learning_rate: f64,
    pub inception_embed_dim: usize,
    pub eval_samples: usize,
}

impl RunConfig {
    pub fn full() -> Self {
        RunConfig {
            preset: Preset::Full,
            seed: 0,
            sample_rate: 16000,
            clip_samples: 16000,
            pitch_min: 44,
            pitch_max: 70,
            train_fraction: 0.9,
            fft_size: 2048,
            overlap: 0.75,
            cqt_octaves: 6,
            cqt_bins_per_octave: 24,
            vqcpc_encoder_channels: vec![512, 512, 256, 32],
            vqcpc_codebook_size: 16,
            vqcpc_gru_hidden: 256,
            vqcpc_gru_layers: 2,
            vqcpc_context_dim: 512,
            vqcpc_prediction_steps: 5,
            vqcpc_negatives: 16,
            vqcpc_commitment_beta: 0.25,
            vqcpc_negative_sharing: NegativeSharing::PerStep,
            vqcpc_negative_source: NegativeSource::Intra,
            vqcpc_normalize_embeddings: false,
            vqcpc_steps: 50_000,
            vqcpc_batch_size: 32,
            vqcpc_learning_rate: 2e-4,
            vqcpc_final_lr_fraction: 1.0,
            vqcpc_kmeans_clips: 256,
            vqcpc_kmeans_iters: 25,
            vqcpc_dead_code_interval: 0,
            gan_noise_dim: 128,
            gan_base_freq: 32,
            gan_feature_maps: vec![512, 256, 256, 256, 256, 128],
            gan_feature_divisor: 1,
            gan_global_hidden: 512,
            gan_iterations_per_scale: 200_000,
            gan_iteration_divisor: 1,
            gan_batch_sizes: vec![30, 30, 20, 20, 12, 12],
            gan_batch_divisor: 1,
            gan_fade_fraction: 0.5,
            gan_d_steps: 1,
            gan_learning_rate: 1e-3,
            gan_beta1: 0.0,
            gan_beta2: 0.99,
            gan_gp_lambda: 10.0,
            gan_ce_weight: 1.0,
            gan_drift: 0.001,
            gan_checkpoint_interval: 5000,
            inception_steps: 20_000,
            inception_batch_size: 64,
            inception_learning_rate: 1e-3,
            inception_embed_dim: 128,
            eval_samples: 25_000,
        }
    }

    pub fn desk() -> Self {
        RunConfig {
            preset: Preset::Desk,
            vqcpc_normalize_embeddings: true,
            vqcpc_steps: 2000,
            vqcpc_batch_size: 8,
            vqcpc_learning_rate: 1e-3,
            vqcpc_final_lr_fraction: 0.05,
            vqcpc_kmeans_clips: 64,
            vqcpc_dead_code_interval: 100,
            gan_feature_divisor: 32,
            gan_global_hidden: 16,
            gan_iteration_divisor: 1000,
            gan_batch_divisor: 5,
            gan_checkpoint_interval: 100,
            inception_steps: 600,
            inception_batch_size: 16,
            eval_samples: 64,
            train_fraction: 0.8,
            ..RunConfig::full()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => RunConfig::desk(),
            Preset::Full => RunConfig::full(),
        }
    }

    /// Parses a config document; missing keys take the named preset's value.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(user: toml::Table) -> Result<Self> {
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("preset: {e}")))?,
        };
        let mut table = toml::Table::try_from(RunConfig::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in user {
            table.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `key=value` overrides; values use TOML syntax, with bare
    /// words accepted as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let raw = raw.trim();
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        // Switching preset via override keeps the explicitly resolved values.
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization of every resolved value.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pitch_min > self.pitch_max {
            return bad(format!("pitch_min {} exceeds pitch_max {}", self.pitch_min, self.pitch_max));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        let n = self.gan_feature_maps.len();
        if n == 0 || self.gan_batch_sizes.len() != n {
            return bad(format!(
                "gan_feature_maps has {n} scales but gan_batch_sizes has {}",
                self.gan_batch_sizes.len()
            ));
        }
        if self.gan_base_freq << (n - 1) != self.fft_size / 2 {
            return bad(format!(
                "{n} scales from {} bins do not reach {} frequency bins",
                self.gan_base_freq,
                self.fft_size / 2
            ));
        }
        for (name, v) in [
            ("gan_feature_divisor", self.gan_feature_divisor),
            ("gan_iteration_divisor", self.gan_iteration_divisor),
            ("gan_batch_divisor", self.gan_batch_divisor),
            ("gan_d_steps", self.gan_d_steps),
            ("vqcpc_batch_size", self.vqcpc_batch_size),
            ("inception_batch_size", self.inception_batch_size),
            ("inception_embed_dim", self.inception_embed_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gan_fade_fraction) {
            return bad(format!("gan_fade_fraction {} outside [0, 1]", self.gan_fade_fraction));
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be at least 2".into());
        }
        self.vqcpc_model().validate()
    }

    pub fn hop_size(&self) -> usize {
        (self.fft_size as f64 * (1.0 - self.overlap)).round() as usize
    }

    /// Frames per clip under the centred framing convention.
    pub fn frames(&self) -> usize {
        self.clip_samples.div_ceil(self.hop_size())
    }

    /// Frames per second of audio, used to turn durations into frame counts.
    pub fn frame_rate(&self) -> f64 {
        self.frames() as f64 * self.sample_rate as f64 / self.clip_samples as f64
    }

    pub fn vqcpc_model(&self) -> VqcpcConfig {
        VqcpcConfig {
            input_bins: self.cqt_octaves * self.cqt_bins_per_octave,
            encoder_channels: self.vqcpc_encoder_channels.clone(),
            codebook_size: self.vqcpc_codebook_size,
            gru_hidden: self.vqcpc_gru_hidden,
            gru_layers: self.vqcpc_gru_layers,
            context_dim: self.vqcpc_context_dim,
            prediction_steps: self.vqcpc_prediction_steps,
            negatives: self.vqcpc_negatives,
            commitment_beta: self.vqcpc_commitment_beta,
            negative_sharing: self.vqcpc_negative_sharing,
            negative_source: self.vqcpc_negative_source,
            normalize_embeddings: self.vqcpc_normalize_embeddings,
        }
    }

    pub fn vqcpc_training(&self) -> VqcpcTrainConfig {
        VqcpcTrainConfig {
            steps: self.vqcpc_steps,
            batch_size: self.vqcpc_batch_size,
            learning_rate: self.vqcpc_learning_rate,
            final_lr_fraction: self.vqcpc_final_lr_fraction,
            kmeans_clips: self.vqcpc_kmeans_clips,
            kmeans_iters: self.vqcpc_kmeans_iters,
            dead_code_interval: self.vqcpc_dead_code_interval,
            seed: self.seed,
        }
    }

    pub fn gan_model(&self, pitch_classes: usize) -> GanConfig {
        GanConfig {
            pitch_classes,
            noise_dim: self.gan_noise_dim,
            codebook_size: self.vqcpc_codebook_size,
            base_freq: self.gan_base_freq,
            feature_maps: self
                .gan_feature_maps
                .iter()
                .map(|&c| (c / self.gan_feature_divisor).max(1))
                .collect(),
            frames: self.frames(),
            global_hidden: self.gan_global_hidden,
        }
    }

    pub fn inception_training(&self) -> InceptionTrainConfig {
        InceptionTrainConfig {
            steps: self.inception_steps,
            batch_size: self.inception_batch_size,
            learning_rate: self.inception_learning_rate,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gp_lambda: self.gan_gp_lambda,
            ce_weight: self.gan_ce_weight,
            drift: self.gan_drift,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}
