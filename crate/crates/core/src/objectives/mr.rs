//! Multi-resolution reconstruction loss: mean over STFT window sizes of the
//! power-compressed magnitude L1 plus the complex L1, each term a per-bin
//! mean absolute error.

use crate::dsp::{stft_slice, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{sc, Scalar, Tape, Var};

#[derive(Debug, Clone)]
pub struct MrLossConfig {
    pub sample_rate: u32,
    pub windows_ms: Vec<f64>,
    pub p: f64,
}

impl MrLossConfig {
    pub fn for_rate(sample_rate: u32) -> Self {
        MrLossConfig {
            sample_rate,
            windows_ms: vec![10.0, 20.0, 30.0, 40.0],
            p: 0.3,
        }
    }

    /// One resolution only (the model's 20 ms analysis window).
    pub fn single_resolution(sample_rate: u32) -> Self {
        MrLossConfig {
            sample_rate,
            windows_ms: vec![20.0],
            p: 0.3,
        }
    }

    pub(crate) fn stft_configs(&self) -> Result<Vec<StftConfig>> {
        self.windows_ms
            .iter()
            .map(|&w| StftConfig::new(self.sample_rate, w, w / 2.0))
            .collect()
    }
}

/// `(L_p, L_s)`: compressed-magnitude MAE and complex MAE, averaged over the
/// configured resolutions.
pub fn mr_loss_components<F: Scalar>(
    s: &[F],
    s_hat: &[F],
    cfg: &MrLossConfig,
) -> Result<(f64, f64)> {
    if s.len() != s_hat.len() {
        return Err(Error::param(format!(
            "length mismatch: {} vs {}",
            s.len(),
            s_hat.len()
        )));
    }
    if cfg.p <= 0.0 {
        return Err(Error::param("compression exponent must be > 0"));
    }
    let mut l_p = 0.0;
    let mut l_s = 0.0;
    for stft_cfg in cfg.stft_configs()? {
        let spec_s = stft_slice(s, &stft_cfg)?;
        let spec_e = stft_slice(s_hat, &stft_cfg)?;
        let n = spec_s.data.len() as f64;
        let mut mag_term = 0.0;
        let mut cplx_term = 0.0;
        for (a, b) in spec_s.data.iter().zip(&spec_e.data) {
            let (ma, mb) = (a.norm().to_f64().unwrap(), b.norm().to_f64().unwrap());
            mag_term += (ma.powf(cfg.p) - mb.powf(cfg.p)).abs();
            cplx_term += (*a - *b).norm().to_f64().unwrap();
        }
        l_p += mag_term / n;
        l_s += cplx_term / n;
    }
    let count = cfg.windows_ms.len() as f64;
    Ok((l_p / count, l_s / count))
}

/// `L_MR = mean_i ( MAE(|S_i|^p, |Shat_i|^p) + MAE(S_i, Shat_i) )`.
pub fn mr_loss<F: Scalar>(s: &[F], s_hat: &[F], cfg: &MrLossConfig) -> Result<f64> {
    let (l_p, l_s) = mr_loss_components(s, s_hat, cfg)?;
    Ok(l_p + l_s)
}

/// Tape version over a differentiable estimate; the target enters as
/// constants. Returns `(L_p, L_s)` variables.
pub fn mr_loss_graph<F: Scalar>(
    tape: &mut Tape<F>,
    est: Var,
    target: &[F],
    cfg: &MrLossConfig,
) -> Result<(Var, Var)> {
    let est_len = tape.value(est).len();
    if est_len != target.len() {
        return Err(Error::param(format!(
            "length mismatch: estimate {est_len} vs target {}",
            target.len()
        )));
    }
    if cfg.p <= 0.0 {
        return Err(Error::param("compression exponent must be > 0"));
    }
    let p = sc::<F>(cfg.p);
    let mut l_p_terms: Option<Var> = None;
    let mut l_s_terms: Option<Var> = None;
    for stft_cfg in cfg.stft_configs()? {
        let win = stft_cfg.window_len();
        let hop = stft_cfg.hop_len();
        let n_bins = stft_cfg.n_bins();

        let spec = tape.stft(est, win, hop)?;
        let n_frames = tape.shape(spec)[1];
        let re = tape.slice_rows(spec, 0, n_bins)?;
        let im = tape.slice_rows(spec, n_bins, 2 * n_bins)?;

        let tgt = stft_slice(target, &stft_cfg)?;
        debug_assert_eq!(tgt.n_frames, n_frames);
        let mut t_re = vec![F::zero(); n_bins * n_frames];
        let mut t_im = vec![F::zero(); n_bins * n_frames];
        let mut t_cmp = vec![F::zero(); n_bins * n_frames];
        for f in 0..n_bins {
            for t in 0..n_frames {
                let c = tgt.at(f, t);
                t_re[f * n_frames + t] = c.re;
                t_im[f * n_frames + t] = c.im;
                t_cmp[f * n_frames + t] = c.norm().powf(p);
            }
        }
        let t_re = tape.constant(vec![n_bins, n_frames], t_re);
        let t_im = tape.constant(vec![n_bins, n_frames], t_im);
        let t_cmp = tape.constant(vec![n_bins, n_frames], t_cmp);

        // |Shat|^p
        let re2 = tape.mul(re, re)?;
        let im2 = tape.mul(im, im)?;
        let sq = tape.add(re2, im2)?;
        let mag = tape.sqrt(sq);
        let cmp = tape.powf(mag, p);
        let diff = tape.sub(cmp, t_cmp)?;
        let diff = tape.abs(diff);
        let mag_term = tape.mean_all(diff);

        // |S - Shat| per bin
        let dre = tape.sub(re, t_re)?;
        let dim = tape.sub(im, t_im)?;
        let dre2 = tape.mul(dre, dre)?;
        let dim2 = tape.mul(dim, dim)?;
        let dsq = tape.add(dre2, dim2)?;
        let dmag = tape.sqrt(dsq);
        let cplx_term = tape.mean_all(dmag);

        l_p_terms = Some(match l_p_terms {
            None => mag_term,
            Some(acc) => tape.add(acc, mag_term)?,
        });
        l_s_terms = Some(match l_s_terms {
            None => cplx_term,
            Some(acc) => tape.add(acc, cplx_term)?,
        });
    }
    let inv = F::one() / sc::<F>(cfg.windows_ms.len() as f64);
    let l_p = tape.scale(l_p_terms.expect("at least one window"), inv);
    let l_s = tape.scale(l_s_terms.expect("at least one window"), inv);
    Ok((l_p, l_s))
}
