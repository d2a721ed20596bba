//! Band-split RNN (BSRNN) speech enhancement toolkit.
//!
//! The crate is organised around a small set of subsystems:
//!
//! - [`audio_io`] — WAV read/write with strict sample-rate accounting.
//! - [`dsp`] — STFT/iSTFT with perfect reconstruction, power compression and
//!   mel filterbanks.
//! - [`nn`] — a minimal deterministic tensor/layer library with reverse-mode
//!   gradients, Adam and gradient clipping; generic over `f32`/`f64`.
//! - [`model`] — the BSRNN/pBSRNN network: band split, band- and
//!   sequence-level modeling, mask estimation, enrollment fusion, streaming
//!   state and MACs accounting.
//! - [`objectives`] — multi-resolution loss, MetricGAN, multi-resolution
//!   spectrogram discriminators and the multi-mel loss.
//! - [`data`] — catalog handling, segment cleaning and on-the-fly noisy
//!   mixture simulation.
//! - [`metrics`] — SI-SNR, log-spectral distance, external-command score
//!   adapters and real-time-factor measurement.
//! - [`trainer`] — pretraining, GAN finetuning, warm starts, schedules,
//!   early stopping and checkpoint management.

pub mod audio_io;
pub mod data;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
