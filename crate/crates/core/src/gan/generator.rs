use rand::Rng;
use vqcpc_gan_autodiff::nn::{Conv2d, ConvSpec, VarStore};
use vqcpc_gan_autodiff::Tensor;

use super::conditioning::{pixel_norm, PIXEL_NORM_EPS};
use super::{GanConfig, ScaleConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Frequency-progressive generator.
///
/// The input block's first convolution spans the whole zero-padded frequency
/// axis, so it is stored as a `(1, 3)` convolution over the conditioning grid
/// that emits `base_freq * C0` channels, which are then folded into the
/// frequency axis.
pub struct Generator {
    pub config: GanConfig,
    pub vs: VarStore,
    input: Conv2d,
    base: Conv2d,
    blocks: Vec<[Conv2d; 2]>,
    to_rgb: Vec<Conv2d>,
}

impl Generator {
    pub fn new(config: &GanConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let vs = VarStore::new();
        let fm = &config.feature_maps;
        let input = Conv2d::equalized(
            &vs,
            "g.input",
            ConvSpec::same(config.cond_channels(), config.base_freq * fm[0], (1, 3)),
            rng,
        );
        let base = Conv2d::equalized(&vs, "g.base", ConvSpec::same(fm[0], fm[0], (3, 3)), rng);
        let blocks = (1..fm.len())
            .map(|s| {
                [
                    Conv2d::equalized(&vs, &format!("g.block{s}.conv0"), ConvSpec::same(fm[s - 1], fm[s], (3, 3)), rng),
                    Conv2d::equalized(&vs, &format!("g.block{s}.conv1"), ConvSpec::same(fm[s], fm[s], (3, 3)), rng),
                ]
            })
            .collect();
        let to_rgb = fm
            .iter()
            .enumerate()
            .map(|(s, &c)| Conv2d::equalized(&vs, &format!("g.to_rgb{s}"), ConvSpec::same(c, 2, (1, 1)), rng))
            .collect();
        Ok(Generator {
            config: config.clone(),
            vs,
            input,
            base,
            blocks,
            to_rgb,
        })
    }

    /// `(B, P + Z + C, 1, L)` conditioning -> `(B, 2, freq_at(scale), L)` in `[-1, 1]`.
    pub fn forward(&self, cond: &Tensor, scale: ScaleConfig) -> Result<Tensor> {
        self.config.check_scale(scale)?;
        let s = cond.shape();
        if s.len() != 4 || s[1] != self.config.cond_channels() || s[2] != 1 {
            return Err(Error::Geometry(format!(
                "generator expects (B, {}, 1, L) conditioning, got {:?}",
                self.config.cond_channels(),
                s
            )));
        }
        let (batch, frames) = (s[0], s[3]);
        let c0 = self.config.feature_maps[0];
        let h = self.input.forward(cond).reshape(&[batch, c0, self.config.base_freq, frames]);
        let h = pixel_norm(&h.relu(), PIXEL_NORM_EPS);
        let mut h = pixel_norm(&self.base.forward(&h).relu(), PIXEL_NORM_EPS);
        let mut prev = None;
        for block in &self.blocks[..scale.index - 1] {
            let up = h.upsample_nearest(2, 2);
            let mut x = up;
            for conv in block {
                x = pixel_norm(&conv.forward(&x).leaky_relu(LEAKY_SLOPE), PIXEL_NORM_EPS);
            }
            prev = Some(std::mem::replace(&mut h, x));
        }
        let out = self.to_rgb[scale.index - 1].forward(&h).tanh();
        match prev {
            Some(p) if scale.fading() => {
                let old = self.to_rgb[scale.index - 2].forward(&p).tanh().upsample_nearest(2, 2);
                Ok(&out.scale(scale.alpha) + &old.scale(1.0 - scale.alpha))
            }
            _ => Ok(out),
        }
    }
}
