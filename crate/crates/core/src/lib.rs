//! Variable-length pitched-note synthesis conditioned on learned envelope
//! tokens.
//!
//! The pipeline runs in stages: [`dsp`] turns audio into spectral features,
//! [`vqcpc`] learns a small codebook of per-frame tokens with a contrastive
//! objective, [`gan`] and [`train`] grow a conditional spectrogram WGAN, and
//! [`eval`] scores generated audio with a purpose-trained classifier.

pub mod checkpoint;
pub mod config;
pub mod dsp;
pub mod eval;
mod error;
pub mod fsutil;
pub mod gan;
pub mod pipeline;
pub mod train;
pub mod vqcpc;

pub use error::{Error, Result};
