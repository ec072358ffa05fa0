//! Local (per-frame) and global (per-clip) critics sharing one ladder design.

use rand::Rng;
use vqcpc_gan_autodiff::nn::{Conv2d, ConvSpec, Linear, VarStore};
use vqcpc_gan_autodiff::Tensor;

use super::{GanConfig, ScaleConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Convolutional ladder mapping `(B, 2, F_s, L)` to `(B, C0, 1, L)`.
///
/// Every convolution has stride 1 along time; frequency is halved by a
/// stride-2 convolution per scale and finally collapsed by a full-height one.
struct Trunk {
    from_rgb: Vec<Conv2d>,
    /// `blocks[j]` maps scale `j + 2` features down to scale `j + 1`.
    blocks: Vec<[Conv2d; 2]>,
    base: Conv2d,
    collapse: Conv2d,
}

impl Trunk {
    fn new(vs: &VarStore, prefix: &str, config: &GanConfig, rng: &mut impl Rng) -> Self {
        let fm = &config.feature_maps;
        let from_rgb = fm
            .iter()
            .enumerate()
            .map(|(s, &c)| Conv2d::equalized(vs, &format!("{prefix}.from_rgb{s}"), ConvSpec::same(2, c, (1, 1)), rng))
            .collect();
        let blocks = (1..fm.len())
            .map(|s| {
                [
                    Conv2d::equalized(vs, &format!("{prefix}.block{s}.conv0"), ConvSpec::same(fm[s], fm[s], (3, 3)), rng),
                    Conv2d::equalized(
                        vs,
                        &format!("{prefix}.block{s}.down"),
                        ConvSpec::same(fm[s], fm[s - 1], (3, 3)).stride(2, 1),
                        rng,
                    ),
                ]
            })
            .collect();
        let base = Conv2d::equalized(vs, &format!("{prefix}.base"), ConvSpec::same(fm[0], fm[0], (3, 3)), rng);
        let collapse = Conv2d::equalized(
            vs,
            &format!("{prefix}.collapse"),
            ConvSpec::same(fm[0], fm[0], (config.base_freq, 1)).padding(0, 0),
            rng,
        );
        Trunk {
            from_rgb,
            blocks,
            base,
            collapse,
        }
    }

    fn forward(&self, config: &GanConfig, x: &Tensor, scale: ScaleConfig) -> Result<Tensor> {
        config.check_scale(scale)?;
        let s = x.shape();
        let freq = config.freq_at(scale.index);
        if s.len() != 4 || s[1] != 2 || s[2] != freq || s[3] == 0 {
            return Err(Error::Geometry(format!("critic at scale {} expects (B, 2, {freq}, L), got {:?}", scale.index, s)));
        }
        let act = |t: Tensor| t.leaky_relu(LEAKY_SLOPE);
        let top = scale.index - 1;
        let mut h = act(self.from_rgb[top].forward(x));
        for j in (0..top).rev() {
            for conv in &self.blocks[j] {
                h = act(conv.forward(&h));
            }
            if j + 1 == top && scale.fading() {
                let skip = act(self.from_rgb[j].forward(&x.avg_pool_axis(2, 2)));
                h = &h.scale(scale.alpha) + &skip.scale(1.0 - scale.alpha);
            }
        }
        let h = act(self.base.forward(&h));
        Ok(act(self.collapse.forward(&h)))
    }
}

/// Frames on either side of `t` that can influence the local score at `t`.
fn receptive_radius(scale: usize) -> usize {
    1 + 2 * (scale - 1)
}

pub struct LocalOutput {
    /// `(B, L)` Wasserstein scores.
    pub scores: Tensor,
    /// `(B * L, C)` token logits, batch-major.
    pub token_logits: Tensor,
}

/// Fully convolutional critic scoring every frame and predicting its token.
pub struct LocalCritic {
    pub config: GanConfig,
    pub vs: VarStore,
    trunk: Trunk,
    head: Conv2d,
}

impl LocalCritic {
    pub fn new(config: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new();
        let trunk = Trunk::new(&vs, "dl", config, rng);
        let c0 = config.feature_maps[0];
        let head = Conv2d::equalized(&vs, "dl.head", ConvSpec::same(c0, 1 + config.codebook_size, (1, 1)), rng);
        Ok(LocalCritic {
            config: config.clone(),
            vs,
            trunk,
            head,
        })
    }

    pub fn forward(&self, x: &Tensor, scale: ScaleConfig) -> Result<LocalOutput> {
        let h = self.trunk.forward(&self.config, x, scale)?;
        let (batch, frames, c) = (x.dim(0), x.dim(3), self.config.codebook_size);
        let out = self.head.forward(&h);
        let scores = out.narrow(1, 0, 1).reshape(&[batch, frames]);
        let token_logits = out
            .narrow(1, 1, c)
            .reshape(&[batch, c, frames])
            .permute(&[0, 2, 1])
            .reshape(&[batch * frames, c]);
        Ok(LocalOutput { scores, token_logits })
    }

    pub fn time_receptive_radius(&self, scale: usize) -> usize {
        receptive_radius(scale)
    }
}

pub struct GlobalOutput {
    /// `(B)` Wasserstein scores.
    pub scores: Tensor,
    /// `(B, P)` pitch logits.
    pub pitch_logits: Tensor,
}

/// Clip-level critic with a two-layer dense head.
pub struct GlobalCritic {
    pub config: GanConfig,
    pub vs: VarStore,
    trunk: Trunk,
    hidden: Linear,
    out: Linear,
}

impl GlobalCritic {
    pub fn new(config: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new();
        let trunk = Trunk::new(&vs, "dg", config, rng);
        let flat = config.feature_maps[0] * config.frames;
        let hidden = Linear::equalized(&vs, "dg.dense0", flat, config.global_hidden, rng);
        let out = Linear::equalized(&vs, "dg.dense1", config.global_hidden, 1 + config.pitch_classes, rng);
        Ok(GlobalCritic {
            config: config.clone(),
            vs,
            trunk,
            hidden,
            out,
        })
    }

    pub fn forward(&self, x: &Tensor, scale: ScaleConfig) -> Result<GlobalOutput> {
        if x.rank() == 4 && x.dim(3) != self.config.frames {
            return Err(Error::Geometry(format!(
                "global critic is built for {} frames, got {}",
                self.config.frames,
                x.dim(3)
            )));
        }
        let h = self.trunk.forward(&self.config, x, scale)?;
        let batch = x.dim(0);
        let flat = h.reshape(&[batch, self.config.feature_maps[0] * self.config.frames]);
        let out = self.out.forward(&self.hidden.forward(&flat).leaky_relu(LEAKY_SLOPE));
        Ok(GlobalOutput {
            scores: out.narrow(1, 0, 1).reshape(&[batch]),
            pitch_logits: out.narrow(1, 1, self.config.pitch_classes),
        })
    }
}
