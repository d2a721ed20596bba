//! WAV read/write and in-memory waveforms.
//!
//! All loaded audio is mono `f32` in the nominal range `[-1, 1]`. Multichannel
//! files are averaged down to mono. No resampling is performed anywhere;
//! callers must supply files at the model sample rate.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rates the model-facing code accepts.
pub const MODEL_RATES: [u32; 2] = [16_000, 48_000];

/// A mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// All samples finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }

    /// Root-mean-square amplitude, accumulated in f64.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| s as f64 * s as f64).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    /// Sum of squared samples in f64.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| s as f64 * s as f64).sum()
    }
}

/// Output sample encodings supported by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Read a WAV file into a mono waveform.
///
/// Accepts 16-bit PCM, 24-bit PCM and IEEE float-32. Multichannel content is
/// averaged to mono. Integer samples are scaled by `1 / 2^(bits-1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::WavFormat {
            path: path.into(),
            detail: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavFormat {
            path: path.into(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f32 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::WavFormat {
                path: path.into(),
                detail: format!("unsupported codec: {fmt:?} {bits}-bit"),
            })
        }
    };

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };

    debug_assert!(samples.iter().all(|s| s.is_finite()));
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write a mono waveform.
///
/// `Pcm16` clips values outside `[-1, 1]` before quantizing; `Float32` is a
/// lossless round trip through [`read_wav`].
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if !w.is_finite() {
        return Err(Error::param("refusing to write non-finite samples"));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => other.into(),
    })?;
    match format {
        WavFormat::Float32 => {
            for &s in &w.samples {
                writer.write_sample(s)?;
            }
        }
        WavFormat::Pcm16 => {
            for &s in &w.samples {
                let clipped = s.clamp(-1.0, 1.0);
                let q = (clipped * 32767.0).round() as i16;
                writer.write_sample(q)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
