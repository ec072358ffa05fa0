//! STFT magnitude + instantaneous-frequency analysis and its inverse.
//!
//! Magnitudes are expressed in dB relative to the largest magnitude a
//! full-scale sinusoid can produce (the window sum), clipped at
//! [`MAG_FLOOR_DB`] and mapped linearly onto `[-1, 1]`. The IF channel stores
//! the wrapped deviation of each bin's phase advance from its nominal advance,
//! divided by pi.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::audio::{AudioClip, DEFAULT_SAMPLE_RATE};
use super::spectro::SpectroTensor;
use crate::error::{Error, Result};

pub const MAG_FLOOR_DB: f64 = -80.0;
pub const DEFAULT_FFT_SIZE: usize = 2048;
pub const DEFAULT_OVERLAP: f64 = 0.75;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub fn hop_size(fft_size: usize, overlap: f64) -> Result<usize> {
    if fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::invalid(format!("fft size {fft_size} is not a power of two")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} outside [0, 1)")));
    }
    let hop = (fft_size as f64 * (1.0 - overlap)).round() as usize;
    if hop == 0 {
        return Err(Error::invalid("overlap leaves a zero hop"));
    }
    Ok(hop)
}

/// Frames produced for `len` samples with center padding.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

pub fn db_to_unit(db: f64) -> f64 {
    (db.clamp(MAG_FLOOR_DB, 0.0) / -MAG_FLOOR_DB) * 2.0 + 1.0
}

pub fn unit_to_db(u: f64) -> f64 {
    (u - 1.0) / 2.0 * -MAG_FLOOR_DB
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Complex STFT frames of `x` (center padded), keeping bins `0..n/2`.
fn complex_frames(x: &[f64], n: usize, hop: usize) -> Vec<Vec<Complex<f64>>> {
    let frames = frame_count(x.len(), hop);
    let window = hann(n);
    let fft = plan(n, false);
    let half = n / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    (0..frames)
        .map(|t| {
            for (i, b) in buf.iter_mut().enumerate() {
                // Sample index in the unpadded signal.
                let s = (t * hop + i) as isize - half as isize;
                let v = if s >= 0 && (s as usize) < x.len() { x[s as usize] } else { 0.0 };
                *b = Complex::new(v * window[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..half].to_vec()
        })
        .collect()
}

/// Two-channel (log-magnitude, IF) spectrogram with `fft_size / 2` bins.
pub fn stft_magif(clip: &AudioClip, fft_size: usize, overlap: f64) -> Result<SpectroTensor> {
    let hop = hop_size(fft_size, overlap)?;
    if clip.samples.len() < fft_size {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than one {fft_size}-sample window",
            clip.samples.len()
        )));
    }
    let frames = complex_frames(&clip.samples, fft_size, hop);
    let bins = fft_size / 2;
    let n_frames = frames.len();
    let reference: f64 = hann(fft_size).iter().sum::<f64>() / 2.0;
    let mut out = SpectroTensor::filled(2, bins, n_frames, 0.0);
    for k in 0..bins {
        let advance = 2.0 * PI * k as f64 * hop as f64 / fft_size as f64;
        let mut prev_phase = 0.0;
        for (t, frame) in frames.iter().enumerate() {
            let z = frame[k];
            // A unit sinusoid at a bin center yields |X| = sum(w) / 2.
            let db = 20.0 * (z.norm() / reference).max(1e-300).log10();
            let mag = db_to_unit(db);
            let phase = z.arg();
            let dev = if t == 0 { wrap_phase(phase) } else { wrap_phase(phase - prev_phase - advance) };
            prev_phase = phase;
            out.set(0, k, t, mag);
            out.set(1, k, t, if mag <= -1.0 { 0.0 } else { (dev / PI).clamp(-1.0, 1.0) });
        }
    }
    Ok(out)
}

/// Rebuilds audio by integrating IF into phase and overlap-adding inverse
/// transforms. Output length is `frames * hop`.
pub fn invert_magif(spec: &SpectroTensor, fft_size: usize, overlap: f64) -> Result<AudioClip> {
    let hop = hop_size(fft_size, overlap)?;
    if spec.channels != 2 || spec.freq_bins != fft_size / 2 {
        return Err(Error::Geometry(format!(
            "spectrogram {:?} does not match fft size {fft_size} (expected 2 x {} bins)",
            spec.shape(),
            fft_size / 2
        )));
    }
    let n = fft_size;
    let bins = n / 2;
    let frames = spec.frames;
    let reference: f64 = hann(n).iter().sum::<f64>() / 2.0;
    let window = hann(n);
    let ifft = plan(n, true);
    let padded_len = (frames.max(1) - 1) * hop + n;
    let mut acc = vec![0.0; padded_len];
    let mut wsum = vec![0.0; padded_len];
    let mut phase = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for k in 0..bins {
            let advance = 2.0 * PI * k as f64 * hop as f64 / n as f64;
            let dev = spec.get(1, k, t) * PI;
            phase[k] = if t == 0 { dev } else { phase[k] + advance + dev };
            let u = spec.get(0, k, t);
            let mag = if u <= -1.0 { 0.0 } else { 10f64.powf(unit_to_db(u) / 20.0) * reference };
            let z = Complex::from_polar(mag, phase[k]);
            buf[k] = z;
            if k > 0 {
                buf[n - k] = z.conj();
            }
        }
        // DC must be real for a real signal.
        buf[0] = Complex::new(buf[0].re, 0.0);
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let out_len = frames * hop;
    let half = n / 2;
    let samples = (0..out_len)
        .map(|i| {
            let p = i + half;
            if p < padded_len && wsum[p] > 1e-8 {
                acc[p] / wsum[p]
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioClip::new(samples, DEFAULT_SAMPLE_RATE))
}
