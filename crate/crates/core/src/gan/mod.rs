//! Conditional spectrogram GAN: a frequency-progressive generator driven by
//! pitch, noise and per-frame tokens, plus a frame-wise local critic and a
//! clip-level global critic, each with an auxiliary classifier.
//!
//! Scales are numbered from 1 (coarsest, `base_freq` bins) to
//! `feature_maps.len()` (finest). The time axis is never resampled.

mod conditioning;
mod critic;
mod generator;
mod losses;
mod penalty;

use serde::{Deserialize, Serialize};

pub use conditioning::{assemble_input, pitch_onehot, pixel_norm, resample_tokens, PIXEL_NORM_EPS};
pub use critic::{GlobalCritic, GlobalOutput, LocalCritic, LocalOutput};
pub use generator::Generator;
pub use losses::{discriminator_loss, generator_loss, CriticEval, GanLossReport, Labels, LossWeights};
pub use penalty::{gradient_penalty, gradient_penalty_at, PenaltyMode};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub pitch_classes: usize,
    pub noise_dim: usize,
    pub codebook_size: usize,
    /// Frequency bins at scale 1; doubles with every further scale.
    pub base_freq: usize,
    /// Channel width per scale, coarsest first.
    pub feature_maps: Vec<usize>,
    /// Frames per training excerpt; fixes the global critic's dense head.
    pub frames: usize,
    pub global_hidden: usize,
}

impl GanConfig {
    pub fn n_scales(&self) -> usize {
        self.feature_maps.len()
    }

    pub fn cond_channels(&self) -> usize {
        self.pitch_classes + self.noise_dim + self.codebook_size
    }

    pub fn freq_at(&self, scale: usize) -> usize {
        self.base_freq << (scale - 1)
    }

    pub fn final_freq(&self) -> usize {
        self.freq_at(self.n_scales())
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_maps.is_empty() || self.feature_maps.contains(&0) {
            return Err(Error::Config("feature_maps needs one positive width per scale".into()));
        }
        if self.pitch_classes == 0 || self.codebook_size == 0 || self.base_freq == 0 || self.frames == 0 || self.global_hidden == 0 {
            return Err(Error::Config("pitch classes, codebook size, base_freq, frames and global_hidden must be positive".into()));
        }
        if self.n_scales() > 16 {
            return Err(Error::Config(format!("{} scales is not supported", self.n_scales())));
        }
        Ok(())
    }

    pub fn check_scale(&self, scale: ScaleConfig) -> Result<()> {
        if scale.index == 0 || scale.index > self.n_scales() {
            return Err(Error::invalid(format!("scale {} outside 1..={}", scale.index, self.n_scales())));
        }
        if !(0.0..=1.0).contains(&scale.alpha) {
            return Err(Error::invalid(format!("fade alpha {} outside [0, 1]", scale.alpha)));
        }
        Ok(())
    }
}

/// Active resolution and fade-in weight of the newest block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub index: usize,
    pub alpha: f64,
}

impl ScaleConfig {
    pub fn new(index: usize, alpha: f64) -> Self {
        ScaleConfig { index, alpha }
    }

    pub fn stable(index: usize) -> Self {
        ScaleConfig { index, alpha: 1.0 }
    }

    /// Whether the previous scale's head still contributes.
    pub fn fading(&self) -> bool {
        self.index > 1 && self.alpha < 1.0
    }
}
