//! STFT/iSTFT with perfect reconstruction, power compression, mel filterbanks.

pub mod fft;
mod mel;

pub use mel::MelBank;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::nn::{sc, Scalar};
use fft::{frame_count, hann_window, one_sided_ifft_real, real_fft_one_sided, FftCache};

/// Envelope values below this are treated as zero coverage.
const ENV_TINY: f64 = 1e-10;

/// Analysis/synthesis configuration. Window is always Hann; FFT size equals
/// the window length (no zero padding).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl StftConfig {
    pub fn new(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        let cfg = StftConfig {
            sample_rate,
            window_ms,
            hop_ms,
        };
        let win = cfg.window_len();
        let hop = cfg.hop_len();
        if win < 2 || hop == 0 {
            return Err(Error::param(format!(
                "degenerate STFT config: window {win}, hop {hop}"
            )));
        }
        if win % hop != 0 {
            return Err(Error::param(format!(
                "hop {hop} must divide window {win} evenly"
            )));
        }
        Ok(cfg)
    }

    /// 20 ms / 10 ms at 48 kHz (window 960, hop 480).
    pub fn full_band_48k() -> Self {
        StftConfig {
            sample_rate: 48_000,
            window_ms: 20.0,
            hop_ms: 10.0,
        }
    }

    /// 32 ms / 8 ms at 16 kHz (window 512, hop 128).
    pub fn wide_band_16k() -> Self {
        StftConfig {
            sample_rate: 16_000,
            window_ms: 32.0,
            hop_ms: 8.0,
        }
    }

    /// The default config for a model sample rate.
    pub fn for_rate(sample_rate: u32) -> Result<Self> {
        match sample_rate {
            48_000 => Ok(Self::full_band_48k()),
            16_000 => Ok(Self::wide_band_16k()),
            other => Err(Error::Config(format!(
                "no default STFT config for {other} Hz (expected 16000 or 48000)"
            ))),
        }
    }

    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// One-sided bin count `window_len/2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.window_len() / 2 + 1
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop_len() as f64
    }

    pub fn hann<F: Scalar>(&self) -> Vec<F> {
        hann_window(self.window_len())
    }
}

/// Complex one-sided spectrogram, stored frame-major: `data[t * n_bins + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<F> {
    pub data: Vec<Complex<F>>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub config: StftConfig,
}

impl<F: Scalar> Spectrogram<F> {
    pub fn zeros(config: StftConfig, n_frames: usize) -> Self {
        let n_bins = config.n_bins();
        Spectrogram {
            data: vec![Complex::new(F::zero(), F::zero()); n_bins * n_frames],
            n_bins,
            n_frames,
            config,
        }
    }

    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> Complex<F> {
        self.data[frame * self.n_bins + bin]
    }

    #[inline]
    pub fn at_mut(&mut self, bin: usize, frame: usize) -> &mut Complex<F> {
        &mut self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, t: usize) -> &[Complex<F>] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Magnitudes, frame-major like `data`.
    pub fn magnitudes(&self) -> Vec<F> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Short-time Fourier transform with a Hann analysis window.
///
/// Frame `t` covers samples `[t*hop, t*hop + window_len)`; trailing samples
/// that do not fill a window are not analyzed.
pub fn stft<F: Scalar>(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram<F>> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::param(format!(
            "waveform rate {} != config rate {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let x: Vec<F> = w.samples.iter().map(|&s| sc::<F>(s as f64)).collect();
    stft_slice(&x, cfg)
}

/// [`stft`] on a raw sample slice (no sample-rate check).
pub fn stft_slice<F: Scalar>(x: &[F], cfg: &StftConfig) -> Result<Spectrogram<F>> {
    let win_len = cfg.window_len();
    let hop = cfg.hop_len();
    if x.len() < win_len {
        return Err(Error::Length {
            detail: format!("signal of {} samples < one window ({win_len})", x.len()),
        });
    }
    let window: Vec<F> = hann_window(win_len);
    let n_frames = frame_count(x.len(), win_len, hop);
    let n_bins = cfg.n_bins();

    let mut cache = FftCache::new();
    let mut out = Spectrogram::zeros(*cfg, n_frames);
    let mut frame = vec![F::zero(); win_len];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = x[start + i] * window[i];
        }
        let spec = real_fft_one_sided(&mut cache, &frame);
        out.data[t * n_bins..(t + 1) * n_bins].copy_from_slice(&spec);
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add: synthesis window equals the analysis
/// window and the result is divided by the summed squared-window envelope.
///
/// Positions with zero envelope coverage (possible at the very edges) come
/// out as zero. For any spectrogram produced by [`stft`], samples at least one
/// window away from both edges are reconstructed with relative L2 error
/// below 1e-6.
pub fn istft<F: Scalar>(spec: &Spectrogram<F>, out_len: usize) -> Result<Waveform> {
    let samples = istft_slice(spec, out_len)?;
    Ok(Waveform::new(
        samples.iter().map(|&v| v.to_f64().unwrap_or(0.0) as f32).collect(),
        spec.config.sample_rate,
    ))
}

/// [`istft`] returning raw samples in the working scalar type.
pub fn istft_slice<F: Scalar>(spec: &Spectrogram<F>, out_len: usize) -> Result<Vec<F>> {
    let cfg = &spec.config;
    let win_len = cfg.window_len();
    let hop = cfg.hop_len();
    let span = win_len + spec.n_frames.saturating_sub(1) * hop;
    if spec.n_frames == 0 || out_len > span {
        return Err(Error::Length {
            detail: format!(
                "requested {out_len} samples but {} frames reconstruct only {span}",
                spec.n_frames
            ),
        });
    }
    let window: Vec<F> = hann_window(win_len);
    let mut cache = FftCache::new();
    let mut acc = vec![F::zero(); span];
    let mut env = vec![F::zero(); span];
    for t in 0..spec.n_frames {
        let frame = one_sided_ifft_real(&mut cache, spec.frame(t), win_len);
        let start = t * hop;
        for i in 0..win_len {
            acc[start + i] += frame[i] * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    let tiny = sc::<F>(ENV_TINY);
    let mut out = vec![F::zero(); out_len];
    for (o, (a, e)) in out.iter_mut().zip(acc.iter().zip(&env)) {
        if *e > tiny {
            *o = *a / *e;
        }
    }
    Ok(out)
}

/// Elementwise `mag^p` for non-negative inputs.
pub fn power_compress<F: Scalar>(mag: &[F], p: f64) -> Result<Vec<F>> {
    if p <= 0.0 {
        return Err(Error::param(format!("compression exponent must be > 0, got {p}")));
    }
    let p = sc::<F>(p);
    Ok(mag.iter().map(|&m| m.powf(p)).collect())
}

/// `bank.weights · |spec|` per frame; output is `n_mels x n_frames`,
/// frame-major (`out[t * n_mels + m]`).
pub fn mel_spectrogram<F: Scalar>(spec: &Spectrogram<F>, bank: &MelBank<F>) -> Result<Vec<F>> {
    if bank.n_bins != spec.n_bins {
        return Err(Error::param(format!(
            "mel bank built for {} bins, spectrogram has {}",
            bank.n_bins, spec.n_bins
        )));
    }
    let mut out = vec![F::zero(); bank.n_mels * spec.n_frames];
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        for m in 0..bank.n_mels {
            let row = bank.row(m);
            let mut accum = F::zero();
            for (w, c) in row.iter().zip(frame) {
                if !w.is_zero() {
                    accum += *w * c.norm();
                }
            }
            out[t * bank.n_mels + m] = accum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
