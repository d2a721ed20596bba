//! Partition of the one-sided FFT bins into subbands, with the boundary
//! between bi-directionally and uni-directionally modeled bands.

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};

/// Ordered partition of `F` frequency bins into `K` contiguous subbands.
///
/// `edges` has `K + 1` strictly increasing entries with `edges[0] == 0` and
/// `edges[K] == F`; band `k` owns bins `[edges[k], edges[k+1])`. Bands with
/// index below `split_band` are modeled bi-directionally along the band axis,
/// the rest uni-directionally (low to high).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSplitScheme {
    pub edges: Vec<usize>,
    pub split_band: usize,
}

/// Frequency below which band-level modeling is bi-directional.
const SPLIT_HZ: f64 = 16_000.0;

impl BandSplitScheme {
    /// Builds the default band table for a model STFT config: 200 Hz bands
    /// up to 4 kHz, 500 Hz bands to 7 kHz, then 2 kHz bands, with the final
    /// band absorbing every remaining bin up to Nyquist. At 48 kHz this
    /// yields the 33-band table (20 + 6 + 7).
    pub fn for_stft(cfg: &StftConfig) -> Result<Self> {
        let n_bins = cfg.n_bins();
        let window_len = cfg.window_len();
        let bin_hz = cfg.sample_rate as f64 / window_len as f64;
        let nyquist = cfg.sample_rate as f64 / 2.0;

        // 20 bands of 200 Hz, 6 of 500 Hz, 7 of 2 kHz; the last band runs to
        // Nyquist. Band starts past Nyquist collapse away below.
        let mut boundaries_hz = Vec::new();
        for k in 0..20 {
            boundaries_hz.push(200.0 * k as f64);
        }
        for j in 0..6 {
            boundaries_hz.push(4_000.0 + 500.0 * j as f64);
        }
        for m in 0..7 {
            boundaries_hz.push(7_000.0 + 2_000.0 * m as f64);
        }
        boundaries_hz.retain(|&b| b < nyquist - 1e-9);

        let mut edges: Vec<usize> = boundaries_hz
            .iter()
            .map(|&b| ((b / bin_hz).round() as usize).min(n_bins))
            .collect();
        edges.push(n_bins);
        edges.dedup();
        if edges.len() < 2 {
            return Err(Error::Scheme(format!(
                "degenerate band table for {} bins",
                n_bins
            )));
        }
        let mut scheme = BandSplitScheme {
            edges,
            split_band: 0,
        };
        scheme.split_band = scheme.default_split(bin_hz);
        scheme.validate(n_bins)?;
        Ok(scheme)
    }

    pub fn from_edges(edges: Vec<usize>, split_band: usize, n_bins: usize) -> Result<Self> {
        let scheme = BandSplitScheme { edges, split_band };
        scheme.validate(n_bins)?;
        Ok(scheme)
    }

    /// Largest `B` such that every band below it lies entirely under 16 kHz.
    fn default_split(&self, bin_hz: f64) -> usize {
        let k = self.n_bands();
        let mut split = k;
        for band in 0..k {
            let top_hz = (self.edges[band + 1] - 1) as f64 * bin_hz;
            if top_hz >= SPLIT_HZ {
                split = band;
                break;
            }
        }
        split.max(1)
    }

    fn validate(&self, n_bins: usize) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::Scheme("need at least one band".into()));
        }
        if self.edges[0] != 0 {
            return Err(Error::Scheme("first edge must be bin 0".into()));
        }
        if *self.edges.last().unwrap() != n_bins {
            return Err(Error::Scheme(format!(
                "last edge {} must equal bin count {n_bins}",
                self.edges.last().unwrap()
            )));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Scheme("edges must be strictly increasing".into()));
        }
        let k = self.n_bands();
        if self.split_band == 0 || self.split_band > k {
            return Err(Error::Scheme(format!(
                "split_band {} outside 1..={k}",
                self.split_band
            )));
        }
        Ok(())
    }

    pub fn n_bands(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn n_bins(&self) -> usize {
        *self.edges.last().unwrap()
    }

    /// Bin range of band `k`.
    pub fn band_bins(&self, k: usize) -> std::ops::Range<usize> {
        self.edges[k]..self.edges[k + 1]
    }

    pub fn band_width(&self, k: usize) -> usize {
        self.edges[k + 1] - self.edges[k]
    }

    /// Band owning a given bin.
    pub fn band_of_bin(&self, bin: usize) -> Option<usize> {
        if bin >= self.n_bins() {
            return None;
        }
        Some(match self.edges.binary_search(&bin) {
            Ok(k) if k == self.n_bands() => k - 1,
            Ok(k) => k,
            Err(k) => k - 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_48k_table_is_the_33_band_partition() {
        let scheme = BandSplitScheme::for_stft(&StftConfig::full_band_48k()).unwrap();
        assert_eq!(scheme.n_bands(), 33);
        assert_eq!(scheme.n_bins(), 481);

        // 20 bands of 4 bins, 6 of 10 bins, 6 of 40 bins, final absorbs 101.
        let widths: Vec<usize> = (0..33).map(|k| scheme.band_width(k)).collect();
        assert!(widths[..20].iter().all(|&w| w == 4));
        assert!(widths[20..26].iter().all(|&w| w == 10));
        assert!(widths[26..32].iter().all(|&w| w == 40));
        assert_eq!(widths[32], 101);
        assert_eq!(widths.iter().sum::<usize>(), 481);
    }

    #[test]
    fn split_band_sits_at_16khz() {
        let scheme = BandSplitScheme::for_stft(&StftConfig::full_band_48k()).unwrap();
        // Band 29 covers 13.0-15.0 kHz (entirely below 16 kHz); band 30
        // covers 15.0-17.0 kHz and crosses it.
        assert_eq!(scheme.split_band, 30);
        let bin_hz = 50.0;
        let last_low_top = (scheme.edges[scheme.split_band] - 1) as f64 * bin_hz;
        assert!(last_low_top < 16_000.0);
        let first_high_top = (scheme.edges[scheme.split_band + 1] - 1) as f64 * bin_hz;
        assert!(first_high_top >= 16_000.0);
    }

    #[test]
    fn wide_band_16k_scheme_is_fully_bidirectional() {
        let scheme = BandSplitScheme::for_stft(&StftConfig::wide_band_16k()).unwrap();
        assert_eq!(scheme.n_bins(), 257);
        // Everything is below 16 kHz at this rate.
        assert_eq!(scheme.split_band, scheme.n_bands());
    }

    #[test]
    fn every_bin_in_exactly_one_band() {
        let scheme = BandSplitScheme::for_stft(&StftConfig::full_band_48k()).unwrap();
        let mut seen = vec![0usize; 481];
        for k in 0..scheme.n_bands() {
            for bin in scheme.band_bins(k) {
                seen[bin] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn tone_placement() {
        let scheme = BandSplitScheme::for_stft(&StftConfig::full_band_48k()).unwrap();
        // 1 kHz = bin 20 -> band 5 (bins [20, 24) span 1.0-1.2 kHz).
        assert_eq!(scheme.band_of_bin(20), Some(5));
        // 4.1 kHz = bin 82 -> band 20, the first 500 Hz band (4.0-4.5 kHz).
        assert_eq!(scheme.band_of_bin(82), Some(20));
        // Nyquist bin is in the last band.
        assert_eq!(scheme.band_of_bin(480), Some(32));
        assert_eq!(scheme.band_of_bin(481), None);
    }

    #[test]
    fn from_edges_validates() {
        assert!(BandSplitScheme::from_edges(vec![0, 10, 20], 1, 20).is_ok());
        assert!(BandSplitScheme::from_edges(vec![0, 10, 20], 0, 20).is_err());
        assert!(BandSplitScheme::from_edges(vec![0, 10, 20], 3, 20).is_err());
        assert!(BandSplitScheme::from_edges(vec![1, 10, 20], 1, 20).is_err());
        assert!(BandSplitScheme::from_edges(vec![0, 10, 19], 1, 20).is_err());
        assert!(BandSplitScheme::from_edges(vec![0, 10, 10, 20], 1, 20).is_err());
    }
}
