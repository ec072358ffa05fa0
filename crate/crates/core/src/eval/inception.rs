//! The embedding classifier behind every metric.
//!
//! A deliberately small network over the log-magnitude channel: frequency is
//! average-pooled by 4, three stride-(2, 1) convolutions halve it further,
//! the result is averaged over time (so any clip length is accepted) and a
//! dense layer produces the embedding. Two linear softmax heads sit on top,
//! one for pitch and one for instrument family.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vqcpc_gan_autodiff::nn::{Conv2d, ConvSpec, Linear, VarStore};
use vqcpc_gan_autodiff::optim::Adam;
use vqcpc_gan_autodiff::{cross_entropy, grad, no_grad, Tensor};

use super::metrics::EmbeddingSet;
use crate::checkpoint::Checkpoint;
use crate::dsp::SpectroTensor;
use crate::error::{Error, Result};

const SEED_SALT: u64 = 0x1ec3_0000;
const FREQ_POOL: usize = 4;
const CHANNELS: [usize; 3] = [8, 16, 32];
const SLOPE: f64 = 0.2;
const EMBED_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InceptionConfig {
    pub freq_bins: usize,
    pub embed_dim: usize,
    /// Pitch vocabulary; class `i` is `pitches[i]`.
    pub pitches: Vec<u8>,
    pub families: Vec<String>,
}

impl InceptionConfig {
    fn pooled_bins(&self) -> usize {
        self.freq_bins / FREQ_POOL >> CHANNELS.len()
    }

    pub fn validate(&self) -> Result<()> {
        let step = FREQ_POOL << CHANNELS.len();
        if self.freq_bins == 0 || self.freq_bins % step != 0 {
            return Err(Error::Config(format!("classifier needs a multiple of {step} frequency bins, got {}", self.freq_bins)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.pitches.len() < 2 || self.families.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "classifier needs at least two classes per head, got {} pitches and {} families",
                self.pitches.len(),
                self.families.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InceptionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// One labelled clip; only the magnitude channel is read.
#[derive(Debug, Clone)]
pub struct LabeledSpectro {
    pub spectro: SpectroTensor,
    pub pitch: u8,
    pub family: String,
}

pub struct InceptionModel {
    pub config: InceptionConfig,
    pub vs: VarStore,
    convs: Vec<Conv2d>,
    embed: Linear,
    pitch_head: Linear,
    family_head: Linear,
}

struct Heads {
    embedding: Tensor,
    pitch_logits: Tensor,
    family_logits: Tensor,
}

impl InceptionModel {
    pub fn new(config: &InceptionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new();
        let mut c_in = 1;
        let convs = CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv2d::new(&vs, &format!("conv{i}"), ConvSpec::same(c_in, c, (3, 3)).stride(2, 1), rng);
                c_in = c;
                conv
            })
            .collect();
        let flat = c_in * config.pooled_bins();
        Ok(InceptionModel {
            config: config.clone(),
            embed: Linear::new(&vs, "embed", flat, config.embed_dim, rng),
            pitch_head: Linear::new(&vs, "pitch", config.embed_dim, config.pitches.len(), rng),
            family_head: Linear::new(&vs, "family", config.embed_dim, config.families.len(), rng),
            convs,
            vs,
        })
    }

    /// `x`: `(B, 1, F, L)` magnitudes.
    fn forward(&self, x: &Tensor) -> Heads {
        let b = x.dim(0);
        let mut h = x.avg_pool_axis(2, FREQ_POOL);
        for conv in &self.convs {
            h = conv.forward(&h).leaky_relu(SLOPE);
        }
        let pooled = h.mean_axes(&[3], false).reshape(&[b, CHANNELS[CHANNELS.len() - 1] * self.config.pooled_bins()]);
        let embedding = self.embed.forward(&pooled).leaky_relu(SLOPE);
        Heads {
            pitch_logits: self.pitch_head.forward(&embedding),
            family_logits: self.family_head.forward(&embedding),
            embedding,
        }
    }

    fn check(&self, s: &SpectroTensor) -> Result<()> {
        if s.freq_bins != self.config.freq_bins || s.frames == 0 {
            return Err(Error::Geometry(format!(
                "classifier expects {} frequency bins, got {} x {} frames",
                self.config.freq_bins, s.freq_bins, s.frames
            )));
        }
        Ok(())
    }

    fn stack<'a>(&self, clips: impl Iterator<Item = &'a SpectroTensor>) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut n = 0;
        let mut frames = None;
        for s in clips {
            self.check(s)?;
            if *frames.get_or_insert(s.frames) != s.frames {
                return Err(Error::Geometry("clips in one batch differ in length".into()));
            }
            data.extend_from_slice(s.channel(0));
            n += 1;
        }
        Ok(Tensor::from_vec(data, &[n, 1, self.config.freq_bins, frames.unwrap_or(0)]))
    }

    fn labels(&self, clips: &[&LabeledSpectro]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut pitch = Vec::with_capacity(clips.len());
        let mut family = Vec::with_capacity(clips.len());
        for c in clips {
            pitch.push(
                self.config
                    .pitches
                    .binary_search(&c.pitch)
                    .map_err(|_| Error::invalid(format!("pitch {} outside the classifier vocabulary", c.pitch)))?,
            );
            family.push(
                self.config
                    .families
                    .binary_search(&c.family)
                    .map_err(|_| Error::invalid(format!("unknown family {}", c.family)))?,
            );
        }
        Ok((pitch, family))
    }

    /// Fraction of clips whose pitch and family are predicted correctly.
    pub fn accuracy(&self, clips: &[LabeledSpectro]) -> Result<(f64, f64)> {
        if clips.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut hit_p, mut hit_f) = (0, 0);
        for chunk in clips.chunks(EMBED_BATCH) {
            let refs: Vec<&LabeledSpectro> = chunk.iter().collect();
            let (pitch, family) = self.labels(&refs)?;
            let out = no_grad(|| self.stack(chunk.iter().map(|c| &c.spectro)).map(|x| self.forward(&x)))?;
            hit_p += out.pitch_logits.argmax_rows().iter().zip(&pitch).filter(|(a, b)| a == b).count();
            hit_f += out.family_logits.argmax_rows().iter().zip(&family).filter(|(a, b)| a == b).count();
        }
        Ok((hit_p as f64 / clips.len() as f64, hit_f as f64 / clips.len() as f64))
    }

    /// Penultimate-layer vectors and both heads' probabilities, one row per
    /// clip, in input order. Clips may differ in length.
    pub fn embed(&self, clips: &[SpectroTensor]) -> Result<EmbeddingSet> {
        let mut set = EmbeddingSet {
            vectors: Vec::with_capacity(clips.len() * self.config.embed_dim),
            dim: self.config.embed_dim,
            pitch_probs: Vec::new(),
            pitch_classes: self.config.pitches.len(),
            family_probs: Vec::new(),
            family_classes: self.config.families.len(),
        };
        let mut start = 0;
        while start < clips.len() {
            let frames = clips[start].frames;
            let mut end = start + 1;
            while end < clips.len() && end - start < EMBED_BATCH && clips[end].frames == frames {
                end += 1;
            }
            let out = no_grad(|| self.stack(clips[start..end].iter()).map(|x| self.forward(&x)))?;
            set.vectors.extend_from_slice(out.embedding.data());
            set.pitch_probs.extend_from_slice(out.pitch_logits.softmax(1).data());
            set.family_probs.extend_from_slice(out.family_logits.softmax(1).data());
            start = end;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InceptionReport {
    pub steps: usize,
    pub final_loss: f64,
    pub held_out: usize,
    pub pitch_accuracy: f64,
    pub family_accuracy: f64,
}

/// Trains the classifier on `train` and scores it on `held_out`.
pub fn train_inception(
    config: &InceptionConfig,
    train: &[LabeledSpectro],
    held_out: &[LabeledSpectro],
    tc: &InceptionTrainConfig,
) -> Result<(InceptionModel, InceptionReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no classifier training clips".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::Config("classifier batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ SEED_SALT);
    let model = InceptionModel::new(config, &mut rng)?;
    let all: Vec<&LabeledSpectro> = train.iter().collect();
    model.labels(&all)?;
    let mut opt = Adam::new(model.vs.vars(), tc.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut final_loss = f64::NAN;
    for step in 0..tc.steps {
        let mut batch = Vec::with_capacity(tc.batch_size);
        while batch.len() < tc.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let (pitch, family) = model.labels(&batch)?;
        let out = model.forward(&model.stack(batch.iter().map(|c| &c.spectro))?);
        let loss = &cross_entropy(&out.pitch_logits, &pitch) + &cross_entropy(&out.family_logits, &family);
        final_loss = loss.item();
        if !final_loss.is_finite() {
            return Err(Error::Diverged(format!("classifier loss became {final_loss} at step {step}")));
        }
        let grads = grad(&[loss], &opt.tensors(), false);
        opt.step(&grads);
    }
    let (pitch_accuracy, family_accuracy) = model.accuracy(held_out)?;
    let report = InceptionReport {
        steps: tc.steps,
        final_loss,
        held_out: held_out.len(),
        pitch_accuracy,
        family_accuracy,
    };
    Ok((model, report))
}

/// Saved classifier. The fingerprint identifies the weights so reports
/// computed with different embedders are never compared by accident.
pub struct InceptionCheckpoint {
    pub model: InceptionModel,
    pub report: Option<InceptionReport>,
}

impl InceptionCheckpoint {
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in self.model.vs.vars() {
            h.update(v.name().as_bytes());
            for x in v.to_vec() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(json!({
            "kind": "inception",
            "config": self.model.config,
            "report": self.report,
        }));
        ck.push_vars("cls", &self.model.vs);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.metadata["kind"] != "inception" {
            return Err(Error::format(path, "not a classifier checkpoint"));
        }
        let config: InceptionConfig = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| Error::format(path, format!("bad classifier config: {e}")))?;
        let model = InceptionModel::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ck.restore_vars("cls", &model.vs)?;
        let report = ck.metadata.get("report").and_then(|r| {
            Some(InceptionReport {
                steps: r["steps"].as_u64()? as usize,
                final_loss: r["final_loss"].as_f64()?,
                held_out: r["held_out"].as_u64()? as usize,
                pitch_accuracy: r["pitch_accuracy"].as_f64()?,
                family_accuracy: r["family_accuracy"].as_f64()?,
            })
        });
        Ok(InceptionCheckpoint { model, report })
    }
}
