//! Analytic multiply-accumulate accounting.
//!
//! Counts FC and LSTM gate matmuls, the mask MLP and the enrollment
//! projection; nonlinearities and normalizations are excluded. LSTM cost per
//! step and direction is `4H * (in + H)`.

use serde::Serialize;

use super::params::ModelConfig;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct MacsReport {
    /// Per analysis frame.
    pub band_split: u64,
    pub band_level: u64,
    pub sequence_level: u64,
    pub mask_mlp: u64,
    pub per_frame: u64,
    /// Per second of audio.
    pub enrollment: u64,
    pub frames_per_second: f64,
    pub total_per_second: f64,
}

impl MacsReport {
    pub fn giga_per_second(&self) -> f64 {
        self.total_per_second / 1e9
    }
}

pub fn count_macs(cfg: &ModelConfig) -> Result<MacsReport> {
    cfg.validate()?;
    let scheme = cfg.scheme()?;
    let n = cfg.n_feat as u64;
    let h = cfg.lstm_hidden as u64;
    let f_bins = cfg.stft.n_bins() as u64;
    let k_bands = scheme.n_bands() as u64;
    let split = scheme.split_band as u64;
    let high = k_bands - split;
    let lstm_step = 4 * h * (n + h);

    // Per-band FC from the split complex features: sum_k 2*bins_k*N = 2*F*N.
    let band_split = 2 * f_bins * n;

    let mut band_level = 0u64;
    band_level += split * 2 * lstm_step; // bi-directional low bands
    band_level += high * lstm_step; // uni-directional high bands
    band_level += split * 2 * h * n; // fc_low [2H -> N]
    band_level += high * h * n; // fc_high [H -> N]

    let seq_dirs = if cfg.causal { 1 } else { 2 };
    let mut sequence_level = 0u64;
    sequence_level += k_bands * seq_dirs * lstm_step;
    sequence_level += k_bands * seq_dirs * h * n; // fc [H or 2H -> N]

    let blocks = cfg.num_blocks as u64;
    let mask_mlp = k_bands * n * cfg.mlp_hidden as u64 + cfg.mlp_hidden as u64 * 8 * f_bins;

    let per_frame =
        band_split + blocks * (band_level + sequence_level) + mask_mlp;

    // The enrollment projection runs once per utterance; it is charged here
    // as once per second of audio.
    let enrollment = if cfg.personalized {
        cfg.embed_dim as u64 * n
    } else {
        0
    };

    let fps = cfg.stft.frames_per_second();
    let total_per_second = per_frame as f64 * fps + enrollment as f64;

    Ok(MacsReport {
        band_split,
        band_level: blocks * band_level,
        sequence_level: blocks * sequence_level,
        mask_mlp,
        per_frame,
        enrollment,
        frames_per_second: fps,
        total_per_second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_full_band_budget() {
        // The online personalized 48 kHz model lands near 14G MACs/s.
        let cfg = ModelConfig::full_band_48k(true, true);
        let report = count_macs(&cfg).unwrap();
        let g = report.giga_per_second();
        assert!(g >= 8.8 && g <= 20.6, "got {g} GMACs/s");
    }

    #[test]
    fn doubling_n_roughly_quadruples_lstm_macs() {
        let base = ModelConfig::full_band_48k(true, false);
        let mut doubled = base.clone();
        doubled.n_feat *= 2;
        doubled.lstm_hidden *= 2;
        doubled.mlp_hidden *= 2;
        let a = count_macs(&base).unwrap();
        let b = count_macs(&doubled).unwrap();
        let ratio = (b.band_level + b.sequence_level) as f64
            / (a.band_level + a.sequence_level) as f64;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn zero_block_model_is_split_plus_mask() {
        let mut cfg = ModelConfig::full_band_48k(true, false);
        cfg.num_blocks = 0;
        let report = count_macs(&cfg).unwrap();
        // Hand sum: band split 2*481*96, mask 33*96*384 + 384*8*481.
        let split = 2 * 481 * 96u64;
        let mask = 33 * 96 * 384u64 + 384 * 8 * 481;
        assert_eq!(report.per_frame, split + mask);
        let want = (split + mask) as f64 * 100.0;
        assert!((report.total_per_second - want).abs() < 1.0);
    }
}
