//! Tape-based model forward for training.
//!
//! Mirrors the direct inference path in `infer` on the autodiff tape; a unit
//! test pins the two against each other. The subband tensor lives on the
//! tape as a `[T*K, N]` matrix in frame-major row order (`row = t*K + k`).

use std::collections::HashMap;

use num_complex::Complex;

use super::infer::ParamIndex;
use super::params::{Model, NormKind, BATCH_NORM_MOMENTUM};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::params::ParamId;
use crate::nn::{sc, Scalar, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Batch statistics for batch norm; running stats recorded for update.
    Train,
    /// Running statistics everywhere (matches the inference engine).
    Infer,
}

/// Batch statistics observed during a training forward, to be folded into
/// the running estimates by [`apply_bn_updates`].
pub struct BnUpdate<F> {
    pub mean_param: ParamId,
    pub var_param: ParamId,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

pub struct GraphForward<F> {
    /// Enhanced spectrogram, real part, `[F_bins, T]`.
    pub shat_re: Var,
    /// Enhanced spectrogram, imaginary part, `[F_bins, T]`.
    pub shat_im: Var,
    /// Time-domain estimate from the WOLA inverse, `[span]` samples.
    pub est_wave: Var,
    pub span: usize,
    pub bn_updates: Vec<BnUpdate<F>>,
}

/// Folds batch statistics into the running mean/variance with the
/// batch-norm momentum.
pub fn apply_bn_updates<F: Scalar>(model: &mut Model<F>, updates: &[BnUpdate<F>]) {
    let momentum = sc::<F>(BATCH_NORM_MOMENTUM);
    let one_minus = F::one() - momentum;
    for u in updates {
        let t = model.store.get_mut(u.mean_param);
        for (r, &b) in t.data.iter_mut().zip(&u.mean) {
            *r = momentum * *r + one_minus * b;
        }
        let t = model.store.get_mut(u.var_param);
        for (r, &b) in t.data.iter_mut().zip(&u.var) {
            *r = momentum * *r + one_minus * b;
        }
    }
}

struct Builder<'a, F: Scalar> {
    tape: &'a mut Tape<F>,
    model: &'a Model<F>,
    mode: GraphMode,
    cache: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate<F>>,
}

impl<'a, F: Scalar> Builder<'a, F> {
    fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let v = self.tape.param(&self.model.store, id);
        self.cache.insert(id, v);
        v
    }

    fn fc(&mut self, ids: &super::infer::FcIds, x: Var) -> Result<Var> {
        let w = self.p(ids.w);
        let b = self.p(ids.b);
        let y = self.tape.matmul(x, w)?;
        self.tape.add_bias(y, b)
    }

    fn norm(&mut self, ids: &super::infer::NormIds, x: Var) -> Result<Var> {
        let gamma = self.p(ids.gamma);
        let beta = self.p(ids.beta);
        let eps = self.model.norm_eps();
        match (self.model.config.norm_kind(), ids.stats, self.mode) {
            (NormKind::Layer, _, _) => self.tape.layer_norm(x, gamma, beta, eps),
            (NormKind::Batch, Some((mean_id, var_id)), GraphMode::Train) => {
                let (out, mean, var) = self.tape.batch_norm_train(x, gamma, beta, eps)?;
                self.bn_updates.push(BnUpdate {
                    mean_param: mean_id,
                    var_param: var_id,
                    mean,
                    var,
                });
                Ok(out)
            }
            (NormKind::Batch, Some((mean_id, var_id)), GraphMode::Infer) => {
                let mean = self.model.store.get(mean_id).data.clone();
                let var = self.model.store.get(var_id).data.clone();
                self.tape.batch_norm_infer(x, gamma, beta, &mean, &var, eps)
            }
            (NormKind::Batch, None, _) => Err(Error::Checkpoint(
                "batch norm without running statistics".into(),
            )),
        }
    }

    fn lstm_rows(
        &mut self,
        ids: &super::infer::LstmIds,
        xs: Var,
        init: Option<(Var, Var)>,
        reverse: bool,
    ) -> Result<(Var, (Var, Var))> {
        let hid = self.model.config.lstm_hidden;
        let (h0, c0) = match init {
            Some(hc) => hc,
            None => {
                let h = self.tape.zeros(vec![1, hid]);
                let c = self.tape.zeros(vec![1, hid]);
                (h, c)
            }
        };
        let wx = self.p(ids.wx);
        let wh = self.p(ids.wh);
        let b = self.p(ids.b);
        self.tape.lstm_over_rows(xs, h0, c0, wx, wh, b, reverse)
    }
}

/// Builds the full model forward on the tape.
///
/// The mixture spectrogram enters as constants; gradients flow into every
/// model parameter (and through the enrollment gate when personalized).
pub fn build_forward<F: Scalar>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    spec: &Spectrogram<F>,
    enrollment: Option<&[F]>,
    mode: GraphMode,
) -> Result<GraphForward<F>> {
    if spec.n_bins != model.scheme.n_bins() {
        return Err(Error::Scheme(format!(
            "spectrogram has {} bins, scheme expects {}",
            spec.n_bins,
            model.scheme.n_bins()
        )));
    }
    let index = ParamIndex::build(model)?;
    let mut b = Builder {
        tape,
        model,
        mode,
        cache: HashMap::new(),
        bn_updates: Vec::new(),
    };

    let scheme = &model.scheme;
    let k_bands = scheme.n_bands();
    let split = scheme.split_band;
    let t_frames = spec.n_frames;
    let n = model.config.n_feat;

    // Per-band input constants in split layout, frame-major: [T, width].
    let mut x_re: Vec<Var> = Vec::with_capacity(k_bands);
    let mut x_im: Vec<Var> = Vec::with_capacity(k_bands);
    for k in 0..k_bands {
        let bins = scheme.band_bins(k);
        let width = bins.len();
        let mut re = vec![F::zero(); t_frames * width];
        let mut im = vec![F::zero(); t_frames * width];
        for t in 0..t_frames {
            for (i, bin) in bins.clone().enumerate() {
                let c = spec.at(bin, t);
                re[t * width + i] = c.re;
                im[t * width + i] = c.im;
            }
        }
        x_re.push(b.tape.constant(vec![t_frames, width], re));
        x_im.push(b.tape.constant(vec![t_frames, width], im));
    }

    // Band split: per-band norm + FC, then interleave to frame-major rows.
    let mut z_bands: Vec<Var> = Vec::with_capacity(k_bands);
    for k in 0..k_bands {
        let cat = b.tape.concat_cols(&[x_re[k], x_im[k]])?;
        let normed = b.norm(&index.band_norm[k], cat)?;
        z_bands.push(b.fc(&index.band_fc[k], normed)?);
    }
    let band_major = b.tape.concat_rows(&z_bands)?; // [K*T, N], row = k*T + t
    let to_frame_major: Vec<usize> = (0..t_frames * k_bands)
        .map(|row| {
            let t = row / k_bands;
            let k = row % k_bands;
            k * t_frames + t
        })
        .collect();
    let mut z = b.tape.gather_rows(band_major, to_frame_major.clone())?; // [T*K, N]

    // Enrollment gating.
    if let Some(e) = enrollment {
        let ids = index
            .enroll
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no enrollment module".into()))?;
        if e.len() != model.config.embed_dim {
            return Err(Error::Config(format!(
                "embedding dim {} != configured {}",
                e.len(),
                model.config.embed_dim
            )));
        }
        let ev = b.tape.constant(vec![1, e.len()], e.to_vec());
        let gate = b.fc(ids, ev)?;
        let gate = b.tape.reshape(gate, vec![n])?;
        z = b.tape.mul_cols(z, gate)?;
    } else if model.config.personalized {
        return Err(Error::Usage(
            "personalized checkpoint requires an enrollment embedding".into(),
        ));
    }

    for l in 0..model.config.num_blocks {
        let ids = &index.blocks[l];

        // Band-level modeling, one frame at a time.
        let mut frames: Vec<Var> = Vec::with_capacity(t_frames);
        for t in 0..t_frames {
            let sub = b.tape.slice_rows(z, t * k_bands, (t + 1) * k_bands)?;
            let low = b.tape.slice_rows(sub, 0, split)?;
            let (fwd, (hf, cf)) = b.lstm_rows(&ids.low_fwd, low, None, false)?;
            let (bwd, _) = b.lstm_rows(&ids.low_bwd, low, None, true)?;
            let pair = b.tape.concat_cols(&[fwd, bwd])?;
            let q_low = b.fc(&ids.fc_low, pair)?;
            let frame = if split < k_bands {
                let high_in = b.tape.slice_rows(sub, split, k_bands)?;
                let high_ids = ids.high.as_ref().expect("high LSTM present");
                let (high_out, _) = b.lstm_rows(high_ids, high_in, Some((hf, cf)), false)?;
                let q_high = b.fc(ids.fc_high.as_ref().expect("high FC present"), high_out)?;
                b.tape.concat_rows(&[q_low, q_high])?
            } else {
                q_low
            };
            frames.push(frame);
        }
        let band_out = b.tape.concat_rows(&frames)?; // already frame-major
        let with_res = b.tape.add(band_out, z)?;
        let z_band = b.norm(&ids.band_norm, with_res)?;

        // Sequence-level modeling per band.
        let mut seq_bands: Vec<Var> = Vec::with_capacity(k_bands);
        for k in 0..k_bands {
            let rows: Vec<usize> = (0..t_frames).map(|t| t * k_bands + k).collect();
            let xs = b.tape.gather_rows(z_band, rows)?;
            let (fwd, _) = b.lstm_rows(&ids.seq_fwd, xs, None, false)?;
            let features = match &ids.seq_bwd {
                None => fwd,
                Some(bwd_ids) => {
                    let (bwd, _) = b.lstm_rows(bwd_ids, xs, None, true)?;
                    b.tape.concat_cols(&[fwd, bwd])?
                }
            };
            seq_bands.push(b.fc(&ids.seq_fc, features)?);
        }
        let seq_band_major = b.tape.concat_rows(&seq_bands)?; // [K*T, N]
        let seq_out = b.tape.gather_rows(seq_band_major, to_frame_major.clone())?;
        let with_res = b.tape.add(seq_out, z_band)?;
        z = b.norm(&ids.seq_norm, with_res)?;
    }

    // Mask estimation per band and complex application to the mixture.
    let mut shat_re_bands: Vec<Var> = Vec::with_capacity(k_bands);
    let mut shat_im_bands: Vec<Var> = Vec::with_capacity(k_bands);
    for k in 0..k_bands {
        let width = scheme.band_width(k);
        let rows: Vec<usize> = (0..t_frames).map(|t| t * k_bands + k).collect();
        let q = b.tape.gather_rows(z, rows)?;
        let mid = b.fc(&index.mask_fc1[k], q)?;
        let mid = b.tape.tanh(mid);
        let full = b.fc(&index.mask_fc2[k], mid)?;
        let gated = b.tape.glu(full)?; // [T, 4*width]
        let m_re = b.tape.slice_cols(gated, 0, width)?;
        let m_im = b.tape.slice_cols(gated, width, 2 * width)?;
        let r_re = b.tape.slice_cols(gated, 2 * width, 3 * width)?;
        let r_im = b.tape.slice_cols(gated, 3 * width, 4 * width)?;

        let mr_xr = b.tape.mul(m_re, x_re[k])?;
        let mi_xi = b.tape.mul(m_im, x_im[k])?;
        let re = b.tape.sub(mr_xr, mi_xi)?;
        let re = b.tape.add(re, r_re)?;
        let mr_xi = b.tape.mul(m_re, x_im[k])?;
        let mi_xr = b.tape.mul(m_im, x_re[k])?;
        let im = b.tape.add(mr_xi, mi_xr)?;
        let im = b.tape.add(im, r_im)?;
        shat_re_bands.push(re);
        shat_im_bands.push(im);
    }
    let shat_re_tf = b.tape.concat_cols(&shat_re_bands)?; // [T, F]
    let shat_im_tf = b.tape.concat_cols(&shat_im_bands)?;
    let shat_re = b.tape.transpose(shat_re_tf)?; // [F, T]
    let shat_im = b.tape.transpose(shat_im_tf)?;

    let win = model.config.stft.window_len();
    let hop = model.config.stft.hop_len();
    let span = win + (t_frames - 1) * hop;
    let est_wave = b.tape.istft(shat_re, shat_im, win, hop, span)?;

    let bn_updates = std::mem::take(&mut b.bn_updates);
    Ok(GraphForward {
        shat_re,
        shat_im,
        est_wave,
        span,
        bn_updates,
    })
}

/// Complex spectrogram values of the forward output, for comparisons.
pub fn forward_to_spectrogram<F: Scalar>(
    tape: &Tape<F>,
    fwd: &GraphForward<F>,
    config: crate::dsp::StftConfig,
) -> Spectrogram<F> {
    let re = tape.value(fwd.shat_re);
    let im = tape.value(fwd.shat_im);
    let shape = tape.shape(fwd.shat_re);
    let (n_bins, n_frames) = (shape[0], shape[1]);
    let mut spec = Spectrogram::zeros(config, n_frames);
    for f in 0..n_bins {
        for t in 0..n_frames {
            *spec.at_mut(f, t) = Complex::new(re[f * n_frames + t], im[f * n_frames + t]);
        }
    }
    spec
}
