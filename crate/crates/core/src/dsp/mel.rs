//! Triangular mel filterbanks (HTK mel scale, 0 Hz to Nyquist,
//! area-unnormalized).

use crate::error::{Error, Result};
use crate::nn::{sc, Scalar};

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank over the one-sided FFT bins.
///
/// Filters peak at 1.0. The top filter's falling edge is extended by one bin
/// spacing past Nyquist so that the Nyquist bin itself keeps nonzero weight;
/// every bin above DC is covered by at least one filter.
#[derive(Debug, Clone)]
pub struct MelBank<F> {
    pub n_mels: usize,
    pub n_bins: usize,
    /// `n_mels x n_bins`, row-major.
    pub weights: Vec<F>,
}

impl<F: Scalar> MelBank<F> {
    pub fn new(n_mels: usize, n_bins: usize, sample_rate: u32) -> Result<Self> {
        if n_mels < 2 || n_bins < 2 {
            return Err(Error::param(format!(
                "degenerate mel bank: {n_mels} mels over {n_bins} bins"
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let window_len = (n_bins - 1) * 2;
        let bin_hz = sample_rate as f64 / window_len as f64;

        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(nyquist);
        let centers: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = vec![F::zero(); n_mels * n_bins];
        for m in 0..n_mels {
            let left = centers[m];
            let center = centers[m + 1];
            // Extend the final filter so the Nyquist bin is covered.
            let right = if m == n_mels - 1 {
                centers[m + 2] + bin_hz
            } else {
                centers[m + 2]
            };
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let rise = if center > left { (f - left) / (center - left) } else { 1.0 };
                let fall = if right > center { (right - f) / (right - center) } else { 1.0 };
                let w = rise.min(fall).max(0.0);
                if w > 0.0 {
                    weights[m * n_bins + bin] = sc::<F>(w);
                }
            }
        }
        Ok(MelBank {
            n_mels,
            n_bins,
            weights,
        })
    }

    pub fn row(&self, m: usize) -> &[F] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_non_negative_and_cover_all_bins() {
        for n_mels in [64usize, 128, 256] {
            let bank = MelBank::<f64>::new(n_mels, 481, 48_000).unwrap();
            assert!(bank.weights.iter().all(|&w| w >= 0.0));
            for bin in 1..481 {
                let covered = (0..n_mels).any(|m| bank.row(m)[bin] > 0.0);
                assert!(covered, "bin {bin} uncovered with {n_mels} mels");
            }
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [50.0, 440.0, 1000.0, 8000.0, 24000.0] {
            let back = mel_to_hz(hz_to_mel(hz));
            assert!((back - hz).abs() / hz < 1e-12);
        }
    }

    #[test]
    fn peaks_reach_one() {
        let bank = MelBank::<f64>::new(64, 481, 48_000).unwrap();
        // Most triangles should attain a weight close to 1 at some bin; with
        // 64 filters over 481 bins each triangle spans several bins.
        let near_peak = (0..64)
            .filter(|&m| bank.row(m).iter().any(|&w| w > 0.5))
            .count();
        assert!(near_peak > 56, "only {near_peak}/64 filters reach 0.5");
    }
}
