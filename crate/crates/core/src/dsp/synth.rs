//! Synthetic stand-in corpus of pitched notes with NSynth-style file names.
//!
//! Each family has its own harmonic recipe and envelope shape, and every clip
//! draws its own envelope parameters, so clips differ in both static timbre
//! and temporal evolution.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audio::write_wav;
use super::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    /// Short attack, then exponential (linear-in-dB) decay.
    Decaying,
    /// Slow attack, slow swell, then a dB-linear release that runs to the end.
    Sustained,
}

struct Family {
    name: &'static str,
    shape: Shape,
    harmonics: usize,
    /// Harmonic roll-off exponent.
    tilt: f64,
    /// Relative weight of even harmonics.
    even: f64,
    /// Extra dB/s of decay per harmonic number.
    damping: f64,
}

const FAMILIES: [Family; 4] = [
    Family {
        name: "keyboard",
        shape: Shape::Decaying,
        harmonics: 12,
        tilt: 1.2,
        even: 1.0,
        damping: 6.0,
    },
    Family {
        name: "mallet",
        shape: Shape::Decaying,
        harmonics: 5,
        tilt: 0.7,
        even: 0.2,
        damping: 14.0,
    },
    Family {
        name: "string",
        shape: Shape::Sustained,
        harmonics: 14,
        tilt: 0.9,
        even: 0.8,
        damping: 0.0,
    },
    Family {
        name: "flute",
        shape: Shape::Sustained,
        harmonics: 4,
        tilt: 2.0,
        even: 0.5,
        damping: 0.0,
    },
];

pub const SYNTH_PITCH_MIN: u8 = 44;
pub const SYNTH_PITCH_MAX: u8 = 70;

pub fn family_names() -> Vec<&'static str> {
    FAMILIES.iter().map(|f| f.name).collect()
}

fn midi_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Per-clip amplitude envelope.
struct Envelope {
    shape: Shape,
    attack: f64,
    /// dB/s of decay (decaying shape) or of release (sustained shape).
    slope_db: f64,
    swell_db: f64,
    swell_hz: f64,
    swell_phase: f64,
    release_at: f64,
}

impl Envelope {
    fn draw(shape: Shape, rng: &mut ChaCha8Rng) -> Self {
        match shape {
            Shape::Decaying => Envelope {
                shape,
                attack: rng.random_range(0.003..0.02),
                slope_db: rng.random_range(20.0..55.0),
                swell_db: 0.0,
                swell_hz: 0.0,
                swell_phase: 0.0,
                release_at: 1.0,
            },
            Shape::Sustained => Envelope {
                shape,
                attack: rng.random_range(0.05..0.3),
                slope_db: rng.random_range(50.0..100.0),
                swell_db: rng.random_range(6.0..15.0),
                swell_hz: rng.random_range(0.7..2.5),
                swell_phase: rng.random_range(0.0..2.0 * PI),
                release_at: rng.random_range(0.5..0.75),
            },
        }
    }

    fn gain(&self, t: f64) -> f64 {
        let attack = (t / self.attack).min(1.0);
        let db = match self.shape {
            Shape::Decaying => -self.slope_db * t,
            Shape::Sustained => {
                let swell = self.swell_db * 0.5 * ((2.0 * PI * self.swell_hz * t + self.swell_phase).sin() - 1.0);
                swell - self.slope_db * (t - self.release_at).max(0.0)
            }
        };
        attack * 10f64.powf(db / 20.0)
    }
}

/// Renders one note of `seconds` duration.
fn render(family: &Family, pitch: u8, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = midi_to_hz(pitch);
    let env = Envelope::draw(family.shape, rng);
    let nyquist = rate as f64 / 2.0;
    let partials: Vec<(f64, f64, f64)> = (1..=family.harmonics)
        .filter(|&h| f0 * h as f64 * 1.002 < nyquist)
        .map(|h| {
            let weight = if h % 2 == 0 { family.even } else { 1.0 };
            let amp = weight / (h as f64).powf(family.tilt);
            // Slight inharmonicity keeps the spectrum from being perfectly periodic.
            let freq = f0 * h as f64 * (1.0 + 0.0004 * (h * h) as f64);
            (freq, amp, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    let n = (seconds * rate as f64).round() as usize;
    let peak = rng.random_range(0.35..0.8);
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let g = env.gain(t);
            let tone: f64 = partials
                .iter()
                .enumerate()
                .map(|(h, &(f, a, ph))| {
                    let damp = 10f64.powf(-family.damping * h as f64 * t / 20.0);
                    a * damp * (2.0 * PI * f * t + ph).sin()
                })
                .sum();
            let noise = 0.0005 * rng.random_range(-1.0..1.0);
            (peak * g * tone / norm + noise).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Writes `n_clips` notes (families round-robin, pitches uniform in
/// `[pitch_min, pitch_max]`) into `dir` and returns their manifest.
pub fn generate_corpus(
    dir: &Path,
    n_clips: usize,
    pitch_min: u8,
    pitch_max: u8,
    seconds: f64,
    rate: u32,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_clips == 0 || pitch_min > pitch_max {
        return Err(Error::invalid("synthetic corpus needs clips and a non-empty pitch range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let family = &FAMILIES[i % FAMILIES.len()];
        let pitch = rng.random_range(pitch_min..=pitch_max);
        let samples = render(family, pitch, seconds, rate, &mut rng);
        let source_id = format!("{}_synthetic_{:03}-{:03}-100", family.name, i, pitch);
        let path: PathBuf = dir.join(format!("{source_id}.wav"));
        write_wav(&path, &samples, rate)?;
        entries.push(ManifestEntry {
            source_id,
            path,
            pitch,
            family: family.name.to_string(),
        });
    }
    Ok(DatasetManifest { entries, split: None })
}
