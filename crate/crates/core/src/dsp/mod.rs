//! Audio I/O, spectral analysis/synthesis and dataset plumbing.

pub mod audio;
pub mod cqt;
pub mod dataset;
pub mod spectro;
pub mod stft;
pub mod synth;

pub use audio::{load_clip, write_wav, AudioClip, LoadOptions, DEFAULT_SAMPLE_RATE};
pub use cqt::{cqt, Cqt};
pub use dataset::{filter_dataset, split_dataset, DatasetManifest, ManifestEntry, Split};
pub use spectro::{CqtSequence, SpectroTensor};
pub use stft::{invert_magif, stft_magif};
