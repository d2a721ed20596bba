//! Tape-free forward pass: batch enhancement and the per-frame step the
//! streaming engine drives.
//!
//! Per-band features use the split complex layout `[re(bins) | im(bins)]`;
//! frame features are `[K, N]` row-major. Causal models run strictly
//! frame-by-frame (the same code path as streaming); offline models add a
//! bi-directional pass over time.

use num_complex::Complex;

use super::params::{Model, NormKind};
use crate::audio_io::Waveform;
use crate::dsp::{istft, stft, Spectrogram};
use crate::error::{Error, Result};
use crate::nn::layers;
use crate::nn::params::ParamId;
use crate::nn::Scalar;

pub(crate) struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

pub(crate) struct FcIds {
    pub w: ParamId,
    pub b: ParamId,
}

pub(crate) struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Running (mean, var) for batch norm.
    pub stats: Option<(ParamId, ParamId)>,
}

pub(crate) struct BlockIds {
    pub low_fwd: LstmIds,
    pub low_bwd: LstmIds,
    pub high: Option<LstmIds>,
    pub fc_low: FcIds,
    pub fc_high: Option<FcIds>,
    pub band_norm: NormIds,
    pub seq_fwd: LstmIds,
    pub seq_bwd: Option<LstmIds>,
    pub seq_fc: FcIds,
    pub seq_norm: NormIds,
}

/// Pre-resolved parameter handles for the fixed model topology.
pub(crate) struct ParamIndex {
    pub band_norm: Vec<NormIds>,
    pub band_fc: Vec<FcIds>,
    pub blocks: Vec<BlockIds>,
    pub mask_fc1: Vec<FcIds>,
    pub mask_fc2: Vec<FcIds>,
    pub enroll: Option<FcIds>,
}

impl ParamIndex {
    pub fn build<F: Scalar>(model: &Model<F>) -> Result<Self> {
        let store = &model.store;
        let id = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let lstm = |prefix: String| -> Result<LstmIds> {
            Ok(LstmIds {
                wx: id(format!("{prefix}.wx"))?,
                wh: id(format!("{prefix}.wh"))?,
                b: id(format!("{prefix}.b"))?,
            })
        };
        let fc = |prefix: String| -> Result<FcIds> {
            Ok(FcIds {
                w: id(format!("{prefix}.w"))?,
                b: id(format!("{prefix}.b"))?,
            })
        };
        let norm = |prefix: String| -> Result<NormIds> {
            let stats = match model.config.norm_kind() {
                NormKind::Batch => Some((
                    id(format!("{prefix}.mean"))?,
                    id(format!("{prefix}.var"))?,
                )),
                NormKind::Layer => None,
            };
            Ok(NormIds {
                gamma: id(format!("{prefix}.gamma"))?,
                beta: id(format!("{prefix}.beta"))?,
                stats,
            })
        };

        let k_bands = model.scheme.n_bands();
        let split = model.scheme.split_band;
        let mut band_norm = Vec::with_capacity(k_bands);
        let mut band_fc = Vec::with_capacity(k_bands);
        let mut mask_fc1 = Vec::with_capacity(k_bands);
        let mut mask_fc2 = Vec::with_capacity(k_bands);
        for k in 0..k_bands {
            band_norm.push(norm(format!("band_split.{k}.norm"))?);
            band_fc.push(fc(format!("band_split.{k}.fc"))?);
            mask_fc1.push(fc(format!("mask.{k}.fc1"))?);
            mask_fc2.push(fc(format!("mask.{k}.fc2"))?);
        }
        let mut blocks = Vec::with_capacity(model.config.num_blocks);
        for l in 0..model.config.num_blocks {
            blocks.push(BlockIds {
                low_fwd: lstm(format!("block.{l}.band.low_fwd"))?,
                low_bwd: lstm(format!("block.{l}.band.low_bwd"))?,
                high: if split < k_bands {
                    Some(lstm(format!("block.{l}.band.high"))?)
                } else {
                    None
                },
                fc_low: fc(format!("block.{l}.band.fc_low"))?,
                fc_high: if split < k_bands {
                    Some(fc(format!("block.{l}.band.fc_high"))?)
                } else {
                    None
                },
                band_norm: norm(format!("block.{l}.band.norm"))?,
                seq_fwd: lstm(format!("block.{l}.seq.fwd"))?,
                seq_bwd: if model.config.causal {
                    None
                } else {
                    Some(lstm(format!("block.{l}.seq.bwd"))?)
                },
                seq_fc: fc(format!("block.{l}.seq.fc"))?,
                seq_norm: norm(format!("block.{l}.seq.norm"))?,
            });
        }
        let enroll = if model.config.personalized {
            Some(fc("enroll.fc".to_string())?)
        } else {
            None
        };
        Ok(ParamIndex {
            band_norm,
            band_fc,
            blocks,
            mask_fc1,
            mask_fc2,
            enroll,
        })
    }
}

fn norm_row<F: Scalar>(model: &Model<F>, ids: &NormIds, x: &mut [F]) {
    let store = &model.store;
    let gamma = &store.get(ids.gamma).data;
    let beta = &store.get(ids.beta).data;
    match ids.stats {
        None => layers::layer_norm(x, gamma, beta, model.norm_eps()),
        Some((mean, var)) => layers::batch_norm_infer(
            x,
            gamma,
            beta,
            &store.get(mean).data,
            &store.get(var).data,
            model.norm_eps(),
        ),
    }
}

fn run_fc<F: Scalar>(model: &Model<F>, ids: &FcIds, x: &[F], out: &mut [F]) {
    layers::fc(
        x,
        &model.store.get(ids.w).data,
        &model.store.get(ids.b).data,
        out,
    );
}

fn run_lstm_step<F: Scalar>(
    model: &Model<F>,
    ids: &LstmIds,
    x: &[F],
    h: &mut [F],
    c: &mut [F],
    gates: &mut [F],
) {
    layers::lstm_step(
        x,
        h,
        c,
        &model.store.get(ids.wx).data,
        &model.store.get(ids.wh).data,
        &model.store.get(ids.b).data,
        gates,
    );
}

/// Enrollment gate vector `g = W·e + b` of length N.
pub fn enroll_gate<F: Scalar>(model: &Model<F>, embedding: &[F]) -> Result<Vec<F>> {
    let index = ParamIndex::build(model)?;
    enroll_gate_ids(model, &index, embedding)
}

pub(crate) fn enroll_gate_ids<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    embedding: &[F],
) -> Result<Vec<F>> {
    let ids = index
        .enroll
        .as_ref()
        .ok_or_else(|| Error::Usage("model has no enrollment module".into()))?;
    if embedding.len() != model.config.embed_dim {
        return Err(Error::Config(format!(
            "embedding dim {} != configured {}",
            embedding.len(),
            model.config.embed_dim
        )));
    }
    let mut gate = vec![F::zero(); model.config.n_feat];
    run_fc(model, ids, embedding, &mut gate);
    Ok(gate)
}

/// Splits one spectrogram frame into normalized per-band features and
/// projects each band to N dims; output is `[K, N]` row-major.
pub(crate) fn band_split_frame<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    spec_frame: &[Complex<F>],
    out: &mut [F],
) {
    let n = model.config.n_feat;
    let scheme = &model.scheme;
    let mut band_in = Vec::new();
    for k in 0..scheme.n_bands() {
        let bins = scheme.band_bins(k);
        let width = bins.len();
        band_in.clear();
        band_in.resize(2 * width, F::zero());
        for (i, bin) in bins.enumerate() {
            band_in[i] = spec_frame[bin].re;
            band_in[width + i] = spec_frame[bin].im;
        }
        norm_row(model, &index.band_norm[k], &mut band_in);
        run_fc(model, &index.band_fc[k], &band_in, &mut out[k * n..(k + 1) * n]);
    }
}

/// Band-level modeling of one frame: bi-directional LSTM over bands below
/// the split, uni-directional above it seeded with the forward pass's final
/// state, per-group FC back to N, residual and normalization.
pub(crate) fn band_level_frame<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    block: usize,
    z: &[F],
    out: &mut [F],
) {
    let n = model.config.n_feat;
    let hid = model.config.lstm_hidden;
    let k_bands = model.scheme.n_bands();
    let split = model.scheme.split_band;
    let ids = &index.blocks[block];

    let mut gates = vec![F::zero(); 4 * hid];
    let mut fwd = vec![F::zero(); split * hid];
    let mut bwd = vec![F::zero(); split * hid];

    // forward direction, low bands; final state seeds the high-band pass
    let mut h = vec![F::zero(); hid];
    let mut c = vec![F::zero(); hid];
    for k in 0..split {
        run_lstm_step(model, &ids.low_fwd, &z[k * n..(k + 1) * n], &mut h, &mut c, &mut gates);
        fwd[k * hid..(k + 1) * hid].copy_from_slice(&h);
    }
    let handoff_h = h.clone();
    let handoff_c = c.clone();

    // backward direction, low bands
    h.iter_mut().for_each(|v| *v = F::zero());
    c.iter_mut().for_each(|v| *v = F::zero());
    for k in (0..split).rev() {
        run_lstm_step(model, &ids.low_bwd, &z[k * n..(k + 1) * n], &mut h, &mut c, &mut gates);
        bwd[k * hid..(k + 1) * hid].copy_from_slice(&h);
    }

    let mut pair = vec![F::zero(); 2 * hid];
    for k in 0..split {
        pair[..hid].copy_from_slice(&fwd[k * hid..(k + 1) * hid]);
        pair[hid..].copy_from_slice(&bwd[k * hid..(k + 1) * hid]);
        run_fc(model, &ids.fc_low, &pair, &mut out[k * n..(k + 1) * n]);
    }

    if split < k_bands {
        let high = ids.high.as_ref().expect("high LSTM present");
        let fc_high = ids.fc_high.as_ref().expect("high FC present");
        let mut h = handoff_h;
        let mut c = handoff_c;
        for k in split..k_bands {
            run_lstm_step(model, high, &z[k * n..(k + 1) * n], &mut h, &mut c, &mut gates);
            run_fc(model, fc_high, &h, &mut out[k * n..(k + 1) * n]);
        }
    }

    for k in 0..k_bands {
        let row = &mut out[k * n..(k + 1) * n];
        for (o, &zi) in row.iter_mut().zip(&z[k * n..(k + 1) * n]) {
            *o += zi;
        }
        norm_row(model, &ids.band_norm, row);
    }
}

/// One causal sequence-level step for every band of one frame, updating the
/// per-band LSTM state in place.
pub(crate) fn seq_level_step<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    block: usize,
    z: &[F],
    h: &mut [F],
    c: &mut [F],
    out: &mut [F],
) {
    let n = model.config.n_feat;
    let hid = model.config.lstm_hidden;
    let ids = &index.blocks[block];
    let mut gates = vec![F::zero(); 4 * hid];
    for k in 0..model.scheme.n_bands() {
        let hk = &mut h[k * hid..(k + 1) * hid];
        let ck = &mut c[k * hid..(k + 1) * hid];
        run_lstm_step(model, &ids.seq_fwd, &z[k * n..(k + 1) * n], hk, ck, &mut gates);
        let row = &mut out[k * n..(k + 1) * n];
        run_fc(model, &ids.seq_fc, hk, row);
        for (o, &zi) in row.iter_mut().zip(&z[k * n..(k + 1) * n]) {
            *o += zi;
        }
        norm_row(model, &ids.seq_norm, row);
    }
}

/// Mask estimation for one frame: per band MLP (N -> MLP hidden, tanh,
/// FC, GLU) emitting the complex mask and residual, then
/// `enhanced = mask * x + residual`.
pub(crate) fn mask_frame<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    q: &[F],
    x_frame: &[Complex<F>],
    out_frame: &mut [Complex<F>],
) {
    let n = model.config.n_feat;
    let hidden = model.config.mlp_hidden;
    let mut mid = vec![F::zero(); hidden];
    let mut full = Vec::new();
    let mut gated = Vec::new();
    for k in 0..model.scheme.n_bands() {
        let bins = model.scheme.band_bins(k);
        let width = bins.len();
        run_fc(model, &index.mask_fc1[k], &q[k * n..(k + 1) * n], &mut mid);
        for v in mid.iter_mut() {
            *v = v.tanh();
        }
        full.clear();
        full.resize(8 * width, F::zero());
        run_fc(model, &index.mask_fc2[k], &mid, &mut full);
        gated.clear();
        gated.resize(4 * width, F::zero());
        layers::glu(&full, &mut gated);
        let (m_re, rest) = gated.split_at(width);
        let (m_im, rest) = rest.split_at(width);
        let (r_re, r_im) = rest.split_at(width);
        for (i, bin) in bins.enumerate() {
            let x = x_frame[bin];
            out_frame[bin] = Complex::new(
                m_re[i] * x.re - m_im[i] * x.im + r_re[i],
                m_re[i] * x.im + m_im[i] * x.re + r_im[i],
            );
        }
    }
}

/// Per-band, per-block LSTM state for the causal sequence path.
pub struct SeqState<F> {
    pub(crate) h: Vec<F>,
    pub(crate) c: Vec<F>,
    blocks: usize,
    bands: usize,
    hidden: usize,
}

impl<F: Scalar> SeqState<F> {
    pub fn new(model: &Model<F>) -> Self {
        let blocks = model.config.num_blocks;
        let bands = model.scheme.n_bands();
        let hidden = model.config.lstm_hidden;
        SeqState {
            h: vec![F::zero(); blocks * bands * hidden],
            c: vec![F::zero(); blocks * bands * hidden],
            blocks,
            bands,
            hidden,
        }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = F::zero());
        self.c.iter_mut().for_each(|v| *v = F::zero());
    }

    fn block_slice(&mut self, block: usize) -> (&mut [F], &mut [F]) {
        let len = self.bands * self.hidden;
        (
            &mut self.h[block * len..(block + 1) * len],
            &mut self.c[block * len..(block + 1) * len],
        )
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().chain(self.c.iter()).all(|v| v.is_zero())
    }

    fn assert_model(&self, model_blocks: usize, bands: usize, hidden: usize) {
        debug_assert_eq!(self.blocks, model_blocks);
        debug_assert_eq!(self.bands, bands);
        debug_assert_eq!(self.hidden, hidden);
    }
}

/// One band-level modeling pass of block `block` over a single frame
/// feature matrix `[K, N]` (row-major), including the per-group FC merges,
/// residual connection and normalization.
pub fn band_level_step<F: Scalar>(model: &Model<F>, block: usize, z: &[F]) -> Result<Vec<F>> {
    let n = model.config.n_feat;
    let k = model.scheme.n_bands();
    if z.len() != k * n {
        return Err(Error::param(format!(
            "frame has {} values, expected K*N = {}",
            z.len(),
            k * n
        )));
    }
    if block >= model.config.num_blocks {
        return Err(Error::param(format!("block {block} out of range")));
    }
    let index = ParamIndex::build(model)?;
    let mut out = vec![F::zero(); k * n];
    band_level_frame(model, &index, block, z, &mut out);
    Ok(out)
}

/// Full causal model step for one spectrogram frame.
pub(crate) fn step_frame<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    gate: Option<&[F]>,
    state: &mut SeqState<F>,
    x_frame: &[Complex<F>],
    out_frame: &mut [Complex<F>],
) {
    let n = model.config.n_feat;
    let k_bands = model.scheme.n_bands();
    state.assert_model(model.config.num_blocks, k_bands, model.config.lstm_hidden);
    let mut z = vec![F::zero(); k_bands * n];
    band_split_frame(model, index, x_frame, &mut z);
    if let Some(g) = gate {
        for k in 0..k_bands {
            for (zi, &gi) in z[k * n..(k + 1) * n].iter_mut().zip(g) {
                *zi *= gi;
            }
        }
    }
    let mut buf = vec![F::zero(); k_bands * n];
    for block in 0..model.config.num_blocks {
        band_level_frame(model, index, block, &z, &mut buf);
        let (h, c) = state.block_slice(block);
        seq_level_step(model, index, block, &buf, h, c, &mut z);
    }
    mask_frame(model, index, &z, x_frame, out_frame);
}

/// Offline (non-causal) forward over a full spectrogram.
fn enhance_offline<F: Scalar>(
    model: &Model<F>,
    index: &ParamIndex,
    spec: &Spectrogram<F>,
    gate: Option<&[F]>,
) -> Result<Spectrogram<F>> {
    let n = model.config.n_feat;
    let hid = model.config.lstm_hidden;
    let k_bands = model.scheme.n_bands();
    let t_frames = spec.n_frames;

    let mut z = vec![F::zero(); t_frames * k_bands * n];
    for t in 0..t_frames {
        band_split_frame(
            model,
            index,
            spec.frame(t),
            &mut z[t * k_bands * n..(t + 1) * k_bands * n],
        );
    }
    if let Some(g) = gate {
        for row in z.chunks_mut(n) {
            for (zi, &gi) in row.iter_mut().zip(g) {
                *zi *= gi;
            }
        }
    }

    let mut band_out = vec![F::zero(); t_frames * k_bands * n];
    let mut fwd = vec![F::zero(); t_frames * hid];
    let mut bwd = vec![F::zero(); t_frames * hid];
    let mut gates = vec![F::zero(); 4 * hid];
    let mut pair = vec![F::zero(); 2 * hid];

    for block in 0..model.config.num_blocks {
        let ids = &index.blocks[block];
        for t in 0..t_frames {
            let frame = &z[t * k_bands * n..(t + 1) * k_bands * n];
            band_level_frame(
                model,
                index,
                block,
                frame,
                &mut band_out[t * k_bands * n..(t + 1) * k_bands * n],
            );
        }
        // sequence modeling per band, bi-directional over time
        let seq_bwd = ids.seq_bwd.as_ref().expect("offline model");
        for k in 0..k_bands {
            let mut h = vec![F::zero(); hid];
            let mut c = vec![F::zero(); hid];
            for t in 0..t_frames {
                let x = &band_out[(t * k_bands + k) * n..(t * k_bands + k + 1) * n];
                run_lstm_step(model, &ids.seq_fwd, x, &mut h, &mut c, &mut gates);
                fwd[t * hid..(t + 1) * hid].copy_from_slice(&h);
            }
            let mut h = vec![F::zero(); hid];
            let mut c = vec![F::zero(); hid];
            for t in (0..t_frames).rev() {
                let x = &band_out[(t * k_bands + k) * n..(t * k_bands + k + 1) * n];
                run_lstm_step(model, seq_bwd, x, &mut h, &mut c, &mut gates);
                bwd[t * hid..(t + 1) * hid].copy_from_slice(&h);
            }
            for t in 0..t_frames {
                pair[..hid].copy_from_slice(&fwd[t * hid..(t + 1) * hid]);
                pair[hid..].copy_from_slice(&bwd[t * hid..(t + 1) * hid]);
                let row = &mut z[(t * k_bands + k) * n..(t * k_bands + k + 1) * n];
                let residual: Vec<F> =
                    band_out[(t * k_bands + k) * n..(t * k_bands + k + 1) * n].to_vec();
                run_fc(model, &ids.seq_fc, &pair, row);
                for (o, &ri) in row.iter_mut().zip(&residual) {
                    *o += ri;
                }
                norm_row(model, &ids.seq_norm, row);
            }
        }
    }

    let mut out = Spectrogram::zeros(spec.config, t_frames);
    let n_bins = spec.n_bins;
    for t in 0..t_frames {
        let q = &z[t * k_bands * n..(t + 1) * k_bands * n];
        let mut frame = vec![Complex::new(F::zero(), F::zero()); n_bins];
        mask_frame(model, index, q, spec.frame(t), &mut frame);
        out.data[t * n_bins..(t + 1) * n_bins].copy_from_slice(&frame);
    }
    Ok(out)
}

/// Runs the model over a whole spectrogram (inference statistics for all
/// normalizations). Causal models process frames strictly left to right.
pub fn enhance_spectrogram<F: Scalar>(
    model: &Model<F>,
    spec: &Spectrogram<F>,
    enrollment: Option<&[F]>,
) -> Result<Spectrogram<F>> {
    if spec.n_bins != model.scheme.n_bins() {
        return Err(Error::Scheme(format!(
            "spectrogram has {} bins, scheme expects {}",
            spec.n_bins,
            model.scheme.n_bins()
        )));
    }
    let index = ParamIndex::build(model)?;
    let gate = match (model.config.personalized, enrollment) {
        (true, Some(e)) => Some(enroll_gate_ids(model, &index, e)?),
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

    if model.config.causal {
        let mut out = Spectrogram::zeros(spec.config, spec.n_frames);
        let mut state = SeqState::new(model);
        let n_bins = spec.n_bins;
        let mut frame = vec![Complex::new(F::zero(), F::zero()); n_bins];
        for t in 0..spec.n_frames {
            step_frame(model, &index, gate.as_deref(), &mut state, spec.frame(t), &mut frame);
            out.data[t * n_bins..(t + 1) * n_bins].copy_from_slice(&frame);
        }
        Ok(out)
    } else {
        enhance_offline(model, &index, spec, gate.as_deref())
    }
}

/// End-to-end enhancement of a waveform. The input is padded by one
/// window-minus-hop of leading zeros (matching the streaming engine's
/// implicit priming) plus whatever trailing zeros complete the last frame;
/// the output is trimmed back to the input length.
pub fn enhance<F: Scalar>(
    model: &Model<F>,
    x: &Waveform,
    enrollment: Option<&[F]>,
) -> Result<Waveform> {
    if x.sample_rate != model.config.sample_rate {
        return Err(Error::param(format!(
            "waveform rate {} != model rate {}",
            x.sample_rate, model.config.sample_rate
        )));
    }
    if x.is_empty() {
        return Ok(x.clone());
    }
    let win = model.config.stft.window_len();
    let hop = model.config.stft.hop_len();
    let lead = win - hop;
    let total = lead + x.len();
    // Frame the signal exactly as the streaming engine does: one analysis
    // frame per hop-sized block, zero tail included.
    let t_frames = total.div_ceil(hop);
    let padded_len = win + (t_frames - 1) * hop;

    let mut padded = vec![0.0f32; padded_len];
    padded[lead..lead + x.len()].copy_from_slice(&x.samples);
    let padded_wave = Waveform::new(padded, x.sample_rate);

    let spec = stft::<F>(&padded_wave, &model.config.stft)?;
    let out_spec = enhance_spectrogram(model, &spec, enrollment)?;
    let full = istft(&out_spec, padded_len)?;
    let samples = full.samples[lead..lead + x.len()].to_vec();
    Ok(Waveform::new(samples, x.sample_rate))
}
