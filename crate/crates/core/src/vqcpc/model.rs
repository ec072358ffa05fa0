//! Frame encoder, codebook, GRU context network and prediction heads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use vqcpc_gan_autodiff::nn::{uniform_init, Linear, Var, VarStore};
use vqcpc_gan_autodiff::{linear, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSharing {
    /// Fresh negatives for every `(b, t, k)`.
    PerStep,
    /// One negative set per `(b, t)` reused across the K prediction steps.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Negatives come from the positive's own excerpt.
    Intra,
    /// Negatives come from any excerpt in the batch (ablation only).
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcpcConfig {
    pub input_bins: usize,
    /// Widths of the frame-local encoder layers; the last is the embedding size.
    pub encoder_channels: Vec<usize>,
    pub codebook_size: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub context_dim: usize,
    pub prediction_steps: usize,
    pub negatives: usize,
    pub commitment_beta: f64,
    pub negative_sharing: NegativeSharing,
    pub negative_source: NegativeSource,
    /// Project embeddings and centroids onto the unit sphere before
    /// quantization.
    pub normalize_embeddings: bool,
}

impl Default for VqcpcConfig {
    fn default() -> Self {
        VqcpcConfig {
            input_bins: 144,
            encoder_channels: vec![512, 512, 256, 32],
            codebook_size: 16,
            gru_hidden: 256,
            gru_layers: 2,
            context_dim: 512,
            prediction_steps: 5,
            negatives: 16,
            commitment_beta: 0.25,
            negative_sharing: NegativeSharing::PerStep,
            negative_source: NegativeSource::Intra,
            normalize_embeddings: false,
        }
    }
}

impl VqcpcConfig {
    pub fn embed_dim(&self) -> usize {
        *self.encoder_channels.last().expect("encoder has at least one layer")
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty()
            || self.encoder_channels.contains(&0)
            || self.input_bins == 0
            || self.gru_hidden == 0
            || self.gru_layers == 0
            || self.context_dim == 0
        {
            return Err(Error::Config("encoder/context widths must be positive".into()));
        }
        if self.codebook_size == 0 || self.codebook_size > 256 {
            return Err(Error::Config(format!("codebook size {} outside [1, 256]", self.codebook_size)));
        }
        if self.prediction_steps == 0 || self.negatives == 0 {
            return Err(Error::Config("prediction steps and negatives must be positive".into()));
        }
        Ok(())
    }
}

/// One GRU layer with fused `(r, z, n)` gate weights, following the usual
/// `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))` formulation.
pub struct GruLayer {
    pub input: Linear,
    pub hidden: Linear,
    pub size: usize,
}

impl GruLayer {
    fn new(vs: &VarStore, name: &str, inputs: usize, size: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (size as f64).sqrt();
        let mk = |suffix: &str, rows: usize, rng: &mut _| {
            let weight = vs.var(format!("{name}.{suffix}.weight"), &[rows, 3 * size], uniform_init(rng, rows * 3 * size, bound));
            let bias = vs.var(format!("{name}.{suffix}.bias"), &[3 * size], uniform_init(rng, 3 * size, bound));
            Linear { weight, bias, gain: 1.0 }
        };
        let input = mk("input", inputs, rng);
        let hidden = mk("hidden", size, rng);
        GruLayer { input, hidden, size }
    }

    /// Runs the recurrence over per-timestep inputs `(B, in)`.
    pub fn forward(&self, xs: &[Tensor]) -> Vec<Tensor> {
        let h_size = self.size;
        let batch = xs[0].dim(0);
        let (wi, bi) = (self.input.weight.tensor(), self.input.bias.tensor());
        let (wh, bh) = (self.hidden.weight.tensor(), self.hidden.bias.tensor());
        let mut h = Tensor::zeros(&[batch, h_size]);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let gx = linear(x, &wi, Some(&bi));
            let gh = linear(&h, &wh, Some(&bh));
            let r = (&gx.narrow(1, 0, h_size) + &gh.narrow(1, 0, h_size)).sigmoid();
            let z = (&gx.narrow(1, h_size, h_size) + &gh.narrow(1, h_size, h_size)).sigmoid();
            let n = (&gx.narrow(1, 2 * h_size, h_size) + &(&r * &gh.narrow(1, 2 * h_size, h_size))).tanh();
            h = &n + &(&z * &(&h - &n));
            out.push(h.clone());
        }
        out
    }
}

pub struct VqcpcModel {
    pub config: VqcpcConfig,
    pub vs: VarStore,
    pub encoder: Vec<Linear>,
    /// `(C, d)` centroids.
    pub codebook: Var,
    pub gru: Vec<GruLayer>,
    pub projection: Linear,
    /// `W_k`, each `(d_z, d_h)`.
    pub heads: Vec<Var>,
}

impl VqcpcModel {
    pub fn new(config: &VqcpcConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new();
        let mut encoder = Vec::new();
        let mut width = config.input_bins;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            encoder.push(Linear::new(&vs, &format!("encoder.{i}"), width, c, rng));
            width = c;
        }
        let d = config.embed_dim();
        let codebook = vs.var("codebook", &[config.codebook_size, d], uniform_init(rng, config.codebook_size * d, 1.0 / (d as f64).sqrt()));
        let mut gru = Vec::new();
        let mut width = d;
        for i in 0..config.gru_layers {
            gru.push(GruLayer::new(&vs, &format!("gru.{i}"), width, config.gru_hidden, rng));
            width = config.gru_hidden;
        }
        let projection = Linear::new(&vs, "context.proj", config.gru_hidden, config.context_dim, rng);
        let bound = 1.0 / (config.context_dim as f64).sqrt();
        let heads = (0..config.prediction_steps)
            .map(|k| vs.var(format!("head.{k}"), &[d, config.context_dim], uniform_init(rng, d * config.context_dim, bound)))
            .collect();
        Ok(VqcpcModel {
            config: config.clone(),
            vs,
            encoder,
            codebook,
            gru,
            projection,
            heads,
        })
    }

    pub fn zero_heads(&self) {
        for h in &self.heads {
            h.set(vec![0.0; h.shape().iter().product()]);
        }
    }

    /// Frame-local encoder: `(N, bins) -> (N, d)`.
    pub fn encode_frames(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.dim(1) != self.config.input_bins {
            return Err(Error::Geometry(format!(
                "encoder expects (frames, {}) features, got {:?}",
                self.config.input_bins,
                x.shape()
            )));
        }
        let last = self.encoder.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = h.relu();
            }
        }
        Ok(if self.config.normalize_embeddings { unit_rows(&h) } else { h })
    }

    /// Codebook as used for quantization (normalized when configured).
    pub fn codebook_tensor(&self) -> Tensor {
        let c = self.codebook.tensor();
        if self.config.normalize_embeddings {
            unit_rows(&c)
        } else {
            c
        }
    }

    /// Causal context vectors: `(B*L, d)` quantized embeddings in batch-major
    /// order -> `(B*L, d_h)`.
    pub fn context(&self, q: &Tensor, batch: usize, len: usize) -> Tensor {
        let d = q.dim(1);
        let seq = q.reshape(&[batch, len, d]);
        let mut xs: Vec<Tensor> = (0..len).map(|t| seq.narrow(1, t, 1).reshape(&[batch, d])).collect();
        for layer in &self.gru {
            xs = layer.forward(&xs);
        }
        let h = self.config.gru_hidden;
        let stacked: Vec<Tensor> = xs.iter().map(|x| x.reshape(&[batch, 1, h])).collect();
        let hs = Tensor::concat(&stacked, 1).reshape(&[batch * len, h]);
        self.projection.forward(&hs)
    }

    pub fn codebook_values(&self) -> Vec<f64> {
        self.codebook_tensor().to_vec()
    }
}

fn unit_rows(x: &Tensor) -> Tensor {
    x / &x.square().sum_axes(&[1], true).add_scalar(1e-12).sqrt()
}
