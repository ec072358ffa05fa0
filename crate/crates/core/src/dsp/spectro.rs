//! Time-frequency grids and their flat binary container.
//!
//! Layout on disk: a 32-byte header (`b"VQGTNSR\0"`, then little-endian u32
//! version, channels, freq_bins, frames, dtype code, reserved) followed by
//! row-major little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"VQGTNSR\0";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 32;

/// `(channels, freq_bins, frames)` grid. Channel 0 is normalized
/// log-magnitude in `[-1, 1]`; channel 1 is instantaneous-frequency deviation
/// in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTensor {
    pub channels: usize,
    pub freq_bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl SpectroTensor {
    pub fn new(channels: usize, freq_bins: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * freq_bins * frames {
            return Err(Error::Geometry(format!(
                "{} values cannot fill a {channels}x{freq_bins}x{frames} grid",
                data.len()
            )));
        }
        Ok(SpectroTensor {
            channels,
            freq_bins,
            frames,
            data,
        })
    }

    pub fn filled(channels: usize, freq_bins: usize, frames: usize, value: f64) -> Self {
        SpectroTensor {
            channels,
            freq_bins,
            frames,
            data: vec![value; channels * freq_bins * frames],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.freq_bins, self.frames]
    }

    #[inline]
    pub fn index(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.freq_bins + f) * self.frames + t
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, t: usize) -> f64 {
        self.data[self.index(c, f, t)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, f: usize, t: usize, v: f64) {
        let i = self.index(c, f, t);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.freq_bins * self.frames;
        &self.data[c * n..(c + 1) * n]
    }

    /// Average-pools along frequency by `factor`; frames are untouched.
    pub fn downscale_freq(&self, factor: usize) -> Result<SpectroTensor> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::invalid(format!("downscale factor {factor} is not a power of two")));
        }
        if self.freq_bins % factor != 0 {
            return Err(Error::Geometry(format!(
                "{} frequency bins are not divisible by {factor}",
                self.freq_bins
            )));
        }
        let fb = self.freq_bins / factor;
        let mut out = SpectroTensor::filled(self.channels, fb, self.frames, 0.0);
        let inv = 1.0 / factor as f64;
        for c in 0..self.channels {
            for f in 0..fb {
                for j in 0..factor {
                    let src = self.index(c, f * factor + j, 0);
                    let dst = out.index(c, f, 0);
                    for t in 0..self.frames {
                        out.data[dst + t] += self.data[src + t];
                    }
                }
                let dst = out.index(c, f, 0);
                for v in &mut out.data[dst..dst + self.frames] {
                    *v *= inv;
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_grid(path, self.channels, self.freq_bins, self.frames, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (channels, freq_bins, frames, data) = read_grid(path)?;
        SpectroTensor::new(channels, freq_bins, frames, data)
    }
}

/// Constant-Q magnitudes, `(bins, frames)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtSequence {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl CqtSequence {
    #[inline]
    pub fn get(&self, bin: usize, t: usize) -> f64 {
        self.data[bin * self.frames + t]
    }

    /// Frame-major copy: one `bins`-vector per frame.
    pub fn frame_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for b in 0..self.bins {
            for t in 0..self.frames {
                out[t * self.bins + b] = self.data[b * self.frames + t];
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_grid(path, 1, self.bins, self.frames, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (channels, bins, frames, data) = read_grid(path)?;
        if channels != 1 {
            return Err(Error::format(path, format!("expected 1 channel, found {channels}")));
        }
        Ok(CqtSequence { bins, frames, data })
    }
}

pub fn encode_grid(channels: usize, freq_bins: usize, frames: usize, data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, channels as u32, freq_bins as u32, frames as u32, DTYPE_F32, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "missing tensor header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (channels, freq_bins, frames, dtype) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4));
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype code {dtype}")));
    }
    let n = channels * freq_bins * frames;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", n * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((channels, freq_bins, frames, data))
}

pub fn write_grid(path: &Path, channels: usize, freq_bins: usize, frames: usize, data: &[f64]) -> Result<()> {
    fsutil::write_atomic(path, &encode_grid(channels, freq_bins, frames, data))
}

pub fn read_grid(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    decode_grid(path, &fsutil::read(path)?)
}
