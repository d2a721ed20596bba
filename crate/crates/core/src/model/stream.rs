//! Streaming causal inference: one hop-sized block in, one hop-sized block
//! out, with algorithmic latency of `window - hop` samples and periodic
//! LSTM-state resets.

use num_complex::Complex;

use super::infer::{step_frame, ParamIndex, SeqState};
use super::params::Model;
use crate::audio_io::Waveform;
use crate::dsp::fft::{hann_window, one_sided_ifft_real, real_fft_one_sided, FftCache};
use crate::error::{Error, Result};
use crate::nn::{sc, Scalar};

/// Streaming state: analysis ring, overlap-add buffers, per-block LSTM
/// state and the reset counter. A reset zeroes the LSTM state and the
/// analysis ring, so everything after the reset boundary evolves exactly
/// like a fresh stream; the overlap-add side keeps running so the output
/// timeline stays continuous.
pub struct StreamState<F: Scalar> {
    analysis: Vec<F>,
    ola_acc: Vec<F>,
    ola_env: Vec<F>,
    seq: SeqState<F>,
    pub frames_since_reset: usize,
    pub reset_period_frames: Option<usize>,
}

impl<F: Scalar> StreamState<F> {
    fn new(model: &Model<F>, reset_period_frames: Option<usize>) -> Self {
        let win = model.config.stft.window_len();
        let hop = model.config.stft.hop_len();
        StreamState {
            analysis: vec![F::zero(); win - hop],
            ola_acc: vec![F::zero(); win],
            ola_env: vec![F::zero(); win],
            seq: SeqState::new(model),
            frames_since_reset: 0,
            reset_period_frames,
        }
    }
}

/// Frame-by-frame enhancement engine for causal checkpoints.
pub struct Streamer<'m, F: Scalar> {
    model: &'m Model<F>,
    index: ParamIndex,
    gate: Option<Vec<F>>,
    state: StreamState<F>,
    fft: FftCache<F>,
    window: Vec<F>,
    frame: Vec<F>,
    spec: Vec<Complex<F>>,
    enhanced: Vec<Complex<F>>,
}

impl<'m, F: Scalar> Streamer<'m, F> {
    /// `reset_period_s` of `Some(10.0)` reproduces the 10-second LSTM state
    /// reset; `None` never resets.
    pub fn new(
        model: &'m Model<F>,
        enrollment: Option<&[F]>,
        reset_period_s: Option<f64>,
    ) -> Result<Self> {
        if !model.config.causal {
            return Err(Error::Usage(
                "streaming requires a causal (online) checkpoint".into(),
            ));
        }
        let index = ParamIndex::build(model)?;
        let gate = match (model.config.personalized, enrollment) {
            (true, Some(e)) => Some(super::infer::enroll_gate_ids(model, &index, e)?),
            (true, None) => {
                return Err(Error::Usage(
                    "personalized checkpoint requires an enrollment embedding".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Usage(
                    "enrollment embedding given, but model is not personalized".into(),
                ))
            }
            (false, None) => None,
        };
        let reset_period_frames = match reset_period_s {
            None => None,
            Some(s) if s > 0.0 => {
                Some((s * model.config.stft.frames_per_second()).round() as usize)
            }
            Some(s) => {
                return Err(Error::Config(format!("reset period {s} s must be > 0")));
            }
        };
        let win = model.config.stft.window_len();
        let n_bins = model.config.stft.n_bins();
        Ok(Streamer {
            state: StreamState::new(model, reset_period_frames),
            index,
            gate,
            fft: FftCache::new(),
            window: hann_window(win),
            frame: vec![F::zero(); win],
            spec: vec![Complex::new(F::zero(), F::zero()); n_bins],
            enhanced: vec![Complex::new(F::zero(), F::zero()); n_bins],
            model,
        })
    }

    pub fn hop_len(&self) -> usize {
        self.model.config.stft.hop_len()
    }

    /// Latency in samples between input and output timelines.
    pub fn latency(&self) -> usize {
        self.model.config.stft.window_len() - self.hop_len()
    }

    pub fn frames_processed_since_reset(&self) -> usize {
        self.state.frames_since_reset
    }

    /// Consumes exactly one hop of input and produces one hop of output
    /// (delayed by [`Streamer::latency`] samples).
    pub fn process_block(&mut self, input: &[F], output: &mut [F]) -> Result<()> {
        let hop = self.hop_len();
        let win = self.model.config.stft.window_len();
        if input.len() != hop || output.len() != hop {
            return Err(Error::param(format!(
                "streaming blocks must be exactly {hop} samples"
            )));
        }

        if let Some(period) = self.state.reset_period_frames {
            if self.state.frames_since_reset >= period {
                self.state.seq.reset();
                self.state.analysis.iter_mut().for_each(|v| *v = F::zero());
                self.state.frames_since_reset = 0;
            }
        }

        // analysis frame = [ring | new block], windowed
        let overlap = win - hop;
        for i in 0..overlap {
            self.frame[i] = self.state.analysis[i] * self.window[i];
        }
        for i in 0..hop {
            self.frame[overlap + i] = input[i] * self.window[overlap + i];
        }
        if hop >= overlap {
            // ring refilled entirely from the tail of the new block
            self.state.analysis.copy_from_slice(&input[hop - overlap..]);
        } else {
            let keep = overlap - hop;
            self.state.analysis.copy_within(hop.., 0);
            self.state.analysis[keep..].copy_from_slice(input);
        }

        let spec = real_fft_one_sided(&mut self.fft, &self.frame);
        self.spec.copy_from_slice(&spec);

        step_frame(
            self.model,
            &self.index,
            self.gate.as_deref(),
            &mut self.state.seq,
            &self.spec,
            &mut self.enhanced,
        );
        self.state.frames_since_reset += 1;

        // synthesis: overlap-add with the squared-window envelope
        let time = one_sided_ifft_real(&mut self.fft, &self.enhanced, win);
        for i in 0..win {
            self.state.ola_acc[i] += time[i] * self.window[i];
            self.state.ola_env[i] += self.window[i] * self.window[i];
        }
        let tiny = sc::<F>(1e-10);
        for i in 0..hop {
            output[i] = if self.state.ola_env[i] > tiny {
                self.state.ola_acc[i] / self.state.ola_env[i]
            } else {
                F::zero()
            };
        }
        self.state.ola_acc.copy_within(hop.., 0);
        self.state.ola_env.copy_within(hop.., 0);
        for i in win - hop..win {
            self.state.ola_acc[i] = F::zero();
            self.state.ola_env[i] = F::zero();
        }
        Ok(())
    }
}

/// File-level streaming wrapper: runs the whole waveform through a
/// [`Streamer`] in hop-sized blocks, compensates the latency and returns an
/// output of the input's length.
pub fn stream_enhance<F: Scalar>(
    model: &Model<F>,
    x: &Waveform,
    enrollment: Option<&[F]>,
    reset_period_s: Option<f64>,
) -> Result<Waveform> {
    if x.sample_rate != model.config.sample_rate {
        return Err(Error::param(format!(
            "waveform rate {} != model rate {}",
            x.sample_rate, model.config.sample_rate
        )));
    }
    let mut streamer = Streamer::new(model, enrollment, reset_period_s)?;
    let hop = streamer.hop_len();
    let latency = streamer.latency();

    let total_in = x.len() + latency;
    let blocks = total_in.div_ceil(hop);
    let mut produced: Vec<F> = Vec::with_capacity(blocks * hop);
    let mut in_block = vec![F::zero(); hop];
    let mut out_block = vec![F::zero(); hop];
    for b in 0..blocks {
        for (i, slot) in in_block.iter_mut().enumerate() {
            let idx = b * hop + i;
            *slot = if idx < x.len() {
                sc::<F>(x.samples[idx] as f64)
            } else {
                F::zero()
            };
        }
        streamer.process_block(&in_block, &mut out_block)?;
        produced.extend_from_slice(&out_block);
    }
    let samples: Vec<f32> = produced[latency..latency + x.len()]
        .iter()
        .map(|&v| v.to_f64().unwrap_or(0.0) as f32)
        .collect();
    Ok(Waveform::new(samples, x.sample_rate))
}
