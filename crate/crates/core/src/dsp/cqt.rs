//! Constant-Q magnitude analysis with direct Hann-windowed complex kernels.
//!
//! Each bin is amplitude-calibrated: a sinusoid of amplitude `A` centred on a
//! bin reads `A` there.

use std::f64::consts::PI;

use super::audio::AudioClip;
use super::spectro::CqtSequence;
use super::stft::{db_to_unit, frame_count};
use crate::error::{Error, Result};

/// C1.
pub const DEFAULT_FMIN: f64 = 32.703_195_662_574_83;
pub const DEFAULT_OCTAVES: usize = 6;
pub const DEFAULT_BINS_PER_OCTAVE: usize = 24;

struct Kernel {
    /// Offsets run from `-half` to `len - half - 1` around the frame centre.
    half: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    scale: f64,
}

/// Precomputed constant-Q filter bank.
pub struct Cqt {
    kernels: Vec<Kernel>,
    pub f_min: f64,
    pub bins_per_octave: usize,
}

impl Cqt {
    pub fn new(rate: u32, f_min: f64, octaves: usize, bins_per_octave: usize) -> Result<Self> {
        if octaves == 0 || bins_per_octave == 0 || f_min <= 0.0 {
            return Err(Error::invalid("constant-Q geometry must be positive"));
        }
        let nyquist = rate as f64 / 2.0;
        let top = f_min * 2f64.powi(octaves as i32);
        if top > nyquist {
            return Err(Error::invalid(format!(
                "{octaves} octaves from {f_min:.2} Hz reach {top:.1} Hz, above Nyquist {nyquist} Hz"
            )));
        }
        let q = 1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0);
        let kernels = (0..octaves * bins_per_octave)
            .map(|b| {
                let f = f_min * 2f64.powf(b as f64 / bins_per_octave as f64);
                let len = (q * rate as f64 / f).ceil() as usize;
                let half = len / 2;
                let omega = 2.0 * PI * f / rate as f64;
                let w: Vec<f64> = (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect();
                let re = (0..len).map(|i| w[i] * (omega * (i as f64 - half as f64)).cos()).collect();
                let im = (0..len).map(|i| -w[i] * (omega * (i as f64 - half as f64)).sin()).collect();
                let scale = 2.0 / w.iter().sum::<f64>();
                Kernel { half, re, im, scale }
            })
            .collect();
        Ok(Cqt {
            kernels,
            f_min,
            bins_per_octave,
        })
    }

    pub fn bins(&self) -> usize {
        self.kernels.len()
    }

    pub fn bin_frequency(&self, b: usize) -> f64 {
        self.f_min * 2f64.powf(b as f64 / self.bins_per_octave as f64)
    }

    /// Magnitudes at frame centres `t * hop` for `t in 0..frames`.
    pub fn transform(&self, x: &[f64], hop: usize, frames: usize) -> CqtSequence {
        let bins = self.bins();
        let mut data = vec![0.0; bins * frames];
        for (b, k) in self.kernels.iter().enumerate() {
            for t in 0..frames {
                let centre = (t * hop) as isize;
                let start = centre - k.half as isize;
                let lo = (-start).max(0) as usize;
                let hi = ((x.len() as isize - start).max(0) as usize).min(k.re.len());
                let (mut re, mut im) = (0.0, 0.0);
                for i in lo..hi {
                    let v = x[(start + i as isize) as usize];
                    re += v * k.re[i];
                    im += v * k.im[i];
                }
                data[b * frames + t] = k.scale * (re * re + im * im).sqrt();
            }
        }
        CqtSequence { bins, frames, data }
    }
}

/// Constant-Q magnitudes with the frame count of the STFT at the same hop.
pub fn cqt(clip: &AudioClip, octaves: usize, bins_per_octave: usize, hop: usize) -> Result<CqtSequence> {
    let bank = Cqt::new(clip.rate, DEFAULT_FMIN, octaves, bins_per_octave)?;
    Ok(bank.transform(&clip.samples, hop, frame_count(clip.samples.len(), hop)))
}

impl CqtSequence {
    /// Trims or zero-pads along time to exactly `frames`.
    pub fn reconcile(&self, frames: usize) -> CqtSequence {
        let mut data = vec![0.0; self.bins * frames];
        let keep = frames.min(self.frames);
        for b in 0..self.bins {
            data[b * frames..b * frames + keep].copy_from_slice(&self.data[b * self.frames..b * self.frames + keep]);
        }
        CqtSequence {
            bins: self.bins,
            frames,
            data,
        }
    }

    /// Encoder input features: dB magnitudes clipped at the floor and mapped
    /// onto `[-1, 1]`, frame-major `(frames, bins)`.
    pub fn unit_db_features(&self) -> Vec<f64> {
        self.frame_major()
            .into_iter()
            .map(|m| db_to_unit(20.0 * m.max(1e-300).log10()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64) -> AudioClip {
        AudioClip::new(
            (0..16000).map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
            16000,
        )
    }

    #[test]
    fn one_second_grid_is_144_by_32() {
        let c = cqt(&tone(440.0, 0.5), 6, 24, 512).unwrap();
        assert_eq!((c.bins, c.frames), (144, 32));
    }

    #[test]
    fn zero_signal_gives_zero_grid() {
        let c = cqt(&AudioClip::new(vec![0.0; 16000], 16000), 6, 24, 512).unwrap();
        assert!(c.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a440_peaks_at_expected_bin() {
        // Oracle: nearest geometric bin to 440 Hz above C1.
        let expected = (24.0 * (440.0f64 / DEFAULT_FMIN).log2()).round() as usize;
        assert_eq!(expected, 90);
        let c = cqt(&tone(440.0, 0.5), 6, 24, 512).unwrap();
        for t in 8..24 {
            let argmax = (0..144).max_by(|&a, &b| c.get(a, t).total_cmp(&c.get(b, t))).unwrap();
            assert_eq!(argmax, expected, "frame {t}");
        }
        // Calibrated amplitude at the centred bin of an interior frame.
        let bank = Cqt::new(16000, DEFAULT_FMIN, 6, 24).unwrap();
        let f = bank.bin_frequency(90);
        let c = bank.transform(&tone(f, 0.5).samples, 512, 32);
        assert!((c.get(90, 16) - 0.5).abs() < 1e-3, "{}", c.get(90, 16));
    }

    #[test]
    fn span_above_nyquist_is_rejected() {
        assert!(cqt(&tone(440.0, 0.5), 8, 24, 512).is_err());
    }

    #[test]
    fn reconcile_trims_and_pads() {
        let c = CqtSequence {
            bins: 2,
            frames: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        assert_eq!(c.reconcile(2).data, vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(c.reconcile(4).data, vec![1.0, 2.0, 3.0, 0.0, 4.0, 5.0, 6.0, 0.0]);
        let u = c.unit_db_features();
        assert_eq!(u.len(), 6);
        assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
