//! Codebook initialization, the training loop and token extraction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vqcpc_gan_autodiff::optim::Adam;
use vqcpc_gan_autodiff::{grad, no_grad, Tensor};

use super::loss::{vqcpc_step_loss, LossParts};
use super::model::{VqcpcConfig, VqcpcModel};
use super::negatives::draw_negatives;
use super::quantize::nearest;
use super::tokens::codebook_perplexity;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcpcTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine-decays the learning rate to this fraction of its initial value
    /// by the last step (1 keeps it constant).
    pub final_lr_fraction: f64,
    /// Clips whose embeddings seed the k-means codebook initialization.
    pub kmeans_clips: usize,
    pub kmeans_iters: usize,
    /// Every this many steps, codes unused since the last check are moved onto
    /// random embeddings of the current batch (0 disables).
    pub dead_code_interval: usize,
    pub seed: u64,
}

impl Default for VqcpcTrainConfig {
    fn default() -> Self {
        VqcpcTrainConfig {
            steps: 50_000,
            batch_size: 32,
            learning_rate: 2e-4,
            final_lr_fraction: 1.0,
            kmeans_clips: 256,
            kmeans_iters: 25,
            dead_code_interval: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqcpcLogRow {
    pub step: usize,
    pub parts: LossParts,
    /// Perplexity of the batch's token histogram.
    pub perplexity: f64,
}

/// Per-clip features, each `(frames, bins)` frame-major with equal frames.
pub struct FeatureSet<'a> {
    pub clips: &'a [Vec<f64>],
    pub frames: usize,
    pub bins: usize,
}

impl FeatureSet<'_> {
    fn validate(&self) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::EmptyDataset("no feature sequences to train on".into()));
        }
        if let Some(c) = self.clips.iter().find(|c| c.len() != self.frames * self.bins) {
            return Err(Error::Geometry(format!(
                "feature sequence of {} values is not {} x {}",
                c.len(),
                self.frames,
                self.bins
            )));
        }
        Ok(())
    }

    fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.frames * self.bins);
        for &i in idx {
            data.extend_from_slice(&self.clips[i]);
        }
        Tensor::from_vec(data, &[idx.len() * self.frames, self.bins])
    }
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded from
/// the point farthest from its centroid; exact duplicates are jittered so no
/// two centroids coincide.
pub fn kmeans(points: &[f64], dim: usize, k: usize, iters: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    assert!(n > 0, "k-means needs points");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centroids = row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = centroids.len() / dim - 1;
        for i in 0..n {
            d2[i] = d2[i].min(sq(row(i), &centroids[c * dim..(c + 1) * dim]));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(row(i), &centroids, dim);
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..dim {
                    centroids[j * dim + t] = sums[j * dim + t] / counts[j] as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq(row(a), &centroids[assign[a] * dim..(assign[a] + 1) * dim]);
                        let db = sq(row(b), &centroids[assign[b] * dim..(assign[b] + 1) * dim]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centroids[j * dim..(j + 1) * dim].copy_from_slice(row(far));
            }
        }
    }
    let scale = points.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3) * 1e-3;
    for j in 1..k {
        while (0..j).any(|i| centroids[i * dim..(i + 1) * dim] == centroids[j * dim..(j + 1) * dim]) {
            for t in 0..dim {
                centroids[j * dim + t] += scale * rng.random_range(-1.0..1.0);
            }
        }
    }
    centroids
}

/// Builds the model and initializes its codebook by k-means over encoder
/// outputs of a warm-up buffer of clips.
pub fn init_vqcpc(
    data: &FeatureSet<'_>,
    cfg: &VqcpcConfig,
    train: &VqcpcTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<VqcpcModel> {
    data.validate()?;
    if data.bins != cfg.input_bins {
        return Err(Error::Geometry(format!("features have {} bins, encoder expects {}", data.bins, cfg.input_bins)));
    }
    let model = VqcpcModel::new(cfg, rng)?;
    let n = train.kmeans_clips.clamp(1, data.clips.len());
    let idx: Vec<usize> = (0..n).collect();
    let emb = no_grad(|| model.encode_frames(&data.batch(&idx)))?;
    let cb = kmeans(emb.data(), cfg.embed_dim(), cfg.codebook_size, train.kmeans_iters, rng);
    model.codebook.set(cb);
    Ok(model)
}

/// Runs the full schedule; `on_log` sees every step's losses.
pub fn train_vqcpc(
    data: &FeatureSet<'_>,
    cfg: &VqcpcConfig,
    train: &VqcpcTrainConfig,
    mut on_log: impl FnMut(&VqcpcLogRow),
) -> Result<VqcpcModel> {
    if train.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let model = init_vqcpc(data, cfg, train, &mut rng)?;
    let mut opt = Adam::new(model.vs.vars(), train.learning_rate, 0.9, 0.999);
    let mut usage = vec![0usize; cfg.codebook_size];
    for step in 0..train.steps {
        let progress = step as f64 / train.steps.max(1) as f64;
        let f = train.final_lr_fraction;
        opt.lr = train.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let idx: Vec<usize> = (0..train.batch_size).map(|_| rng.random_range(0..data.clips.len())).collect();
        let x = data.batch(&idx);
        let negs = draw_negatives(
            &mut rng,
            train.batch_size,
            data.frames,
            cfg.prediction_steps,
            cfg.negatives,
            cfg.negative_sharing,
            cfg.negative_source,
        )?;
        let out = vqcpc_step_loss(&model, &x, train.batch_size, data.frames, &negs, None)?;
        if !out.parts.total.is_finite() {
            return Err(Error::Diverged(format!("VQCPC loss became {} at step {step}", out.parts.total)));
        }
        let grads = grad(&[out.total], &opt.tensors(), false);
        opt.step(&grads);
        for &t in &out.tokens {
            usage[t] += 1;
        }
        if train.dead_code_interval > 0 && (step + 1) % train.dead_code_interval == 0 {
            reseed_dead_codes(&model, &usage, &out.frozen.embeddings, &mut rng);
            usage.iter_mut().for_each(|u| *u = 0);
        }
        let tokens: Vec<u8> = out.tokens.iter().map(|&t| t as u8).collect();
        on_log(&VqcpcLogRow {
            step,
            parts: out.parts,
            perplexity: codebook_perplexity([tokens.as_slice()]),
        });
    }
    Ok(model)
}

fn reseed_dead_codes(model: &VqcpcModel, usage: &[usize], embeddings: &[f64], rng: &mut ChaCha8Rng) {
    let d = model.config.embed_dim();
    let rows = embeddings.len() / d;
    let mut cb = model.codebook_values();
    let mut changed = false;
    for (j, &u) in usage.iter().enumerate() {
        if u == 0 {
            let r = rng.random_range(0..rows);
            cb[j * d..(j + 1) * d].copy_from_slice(&embeddings[r * d..(r + 1) * d]);
            changed = true;
        }
    }
    if changed {
        log::debug!("re-seeded {} unused codes", usage.iter().filter(|&&u| u == 0).count());
        model.codebook.set(cb);
    }
}

/// Tokens for one `(frames, bins)` feature sequence.
pub fn extract_tokens(model: &VqcpcModel, features: &[f64]) -> Result<Vec<u8>> {
    let bins = model.config.input_bins;
    if features.len() % bins != 0 {
        return Err(Error::Geometry(format!("{} feature values are not a multiple of {bins} bins", features.len())));
    }
    let frames = features.len() / bins;
    let e = no_grad(|| model.encode_frames(&Tensor::from_vec(features.to_vec(), &[frames, bins])))?;
    let cb = model.codebook_values();
    let d = model.config.embed_dim();
    Ok(e.data().chunks_exact(d).map(|row| nearest(row, &cb, d) as u8).collect())
}

/// Trained encoder + configuration fingerprint.
pub struct EncoderCheckpoint {
    pub model: VqcpcModel,
    pub fingerprint: String,
    pub steps: usize,
}

impl EncoderCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(json!({
            "kind": "vqcpc",
            "fingerprint": self.fingerprint,
            "steps": self.steps,
            "config": self.model.config,
        }));
        ck.push_vars("vqcpc", &self.model.vs);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.metadata["kind"] != "vqcpc" {
            return Err(Error::format(path, "not an encoder checkpoint"));
        }
        let config: VqcpcConfig = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| Error::format(path, format!("bad encoder config: {e}")))?;
        let model = VqcpcModel::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ck.restore_vars("vqcpc", &model.vs)?;
        Ok(EncoderCheckpoint {
            model,
            fingerprint: ck.metadata["fingerprint"].as_str().unwrap_or_default().to_string(),
            steps: ck.metadata["steps"].as_u64().unwrap_or(0) as usize,
        })
    }
}
