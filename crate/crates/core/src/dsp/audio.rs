//! Mono clips and 16-bit PCM wave I/O.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with the labels carried through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Amplitudes in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub rate: u32,
    /// MIDI pitch.
    pub pitch: u8,
    pub instrument_family: String,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, rate: u32) -> Self {
        AudioClip {
            samples,
            rate,
            pitch: 0,
            instrument_family: String::new(),
            source_id: String::new(),
        }
    }

    pub fn with_labels(mut self, source_id: &str, pitch: u8, family: &str) -> Self {
        self.source_id = source_id.to_string();
        self.pitch = pitch;
        self.instrument_family = family.to_string();
        self
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub expected_rate: u32,
    /// Trim or zero-pad to this many samples.
    pub length: Option<usize>,
    /// Resample (linear interpolation) instead of rejecting other rates.
    pub resample: bool,
}

impl LoadOptions {
    pub fn new(expected_rate: u32, length: Option<usize>) -> Self {
        LoadOptions {
            expected_rate,
            length,
            resample: false,
        }
    }
}

/// Reads a mono wave file, scales integer PCM to `[-1, 1]` and fits it to the
/// configured length.
pub fn load_clip(path: &Path, opts: &LoadOptions) -> Result<AudioClip> {
    let audio_err = |message: String| Error::Audio {
        path: path.to_path_buf(),
        message,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
    };
    let mut samples = if spec.sample_rate == opts.expected_rate {
        samples
    } else if opts.resample {
        resample_linear(&samples, spec.sample_rate, opts.expected_rate)
    } else {
        return Err(Error::RateMismatch {
            found: spec.sample_rate,
            expected: opts.expected_rate,
        });
    };
    if let Some(len) = opts.length {
        samples.resize(len, 0.0);
    }
    let source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut clip = AudioClip::new(samples, opts.expected_rate);
    clip.source_id = source_id;
    Ok(clip)
}

pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if samples.is_empty() || from == to {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64) as usize;
    let step = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = samples[j.min(samples.len() - 1)];
            let b = samples[(j + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Encodes samples as 16-bit PCM mono wave bytes, clipping to `[-1, 1]`.
pub fn encode_wav(samples: &[f64], rate: u32) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(|e| Error::invalid(e.to_string()))?;
        for &s in samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(|e| Error::invalid(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    fsutil::write_atomic(path, &encode_wav(samples, rate)?)
}
