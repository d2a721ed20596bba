//! FFT plumbing shared by the plain and differentiable transforms.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::nn::{sc, Scalar};

/// Periodic (DFT-even) Hann window.
pub fn hann_window<F: Scalar>(len: usize) -> Vec<F> {
    let n = len as f64;
    (0..len)
        .map(|i| sc::<F>(0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos())))
        .collect()
}

/// Number of complete analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize, window_len: usize, hop_len: usize) -> usize {
    if len < window_len {
        0
    } else {
        1 + (len - window_len) / hop_len
    }
}

/// Cache of planned FFTs keyed by (size, inverse).
pub struct FftCache<F: Scalar> {
    planner: FftPlanner<F>,
    plans: HashMap<(usize, bool), Arc<dyn Fft<F>>>,
}

impl<F: Scalar> Default for FftCache<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> FftCache<F> {
    pub fn new() -> Self {
        FftCache {
            planner: FftPlanner::new(),
            plans: HashMap::new(),
        }
    }

    pub fn forward(&mut self, size: usize) -> Arc<dyn Fft<F>> {
        let planner = &mut self.planner;
        self.plans
            .entry((size, false))
            .or_insert_with(|| planner.plan_fft_forward(size))
            .clone()
    }

    /// Unnormalized inverse FFT (no 1/N factor applied by rustfft).
    pub fn inverse(&mut self, size: usize) -> Arc<dyn Fft<F>> {
        let planner = &mut self.planner;
        self.plans
            .entry((size, true))
            .or_insert_with(|| planner.plan_fft_inverse(size))
            .clone()
    }
}

/// Forward FFT of a real frame, returning the one-sided spectrum
/// (`len/2 + 1` bins).
pub fn real_fft_one_sided<F: Scalar>(
    cache: &mut FftCache<F>,
    frame: &[F],
) -> Vec<Complex<F>> {
    let n = frame.len();
    let mut buf: Vec<Complex<F>> = frame.iter().map(|&x| Complex::new(x, F::zero())).collect();
    cache.forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`real_fft_one_sided`]: Hermitian-extends the one-sided
/// spectrum, applies the unnormalized inverse FFT and divides by `n`.
pub fn one_sided_ifft_real<F: Scalar>(
    cache: &mut FftCache<F>,
    spectrum: &[Complex<F>],
    n: usize,
) -> Vec<F> {
    debug_assert_eq!(spectrum.len(), n / 2 + 1);
    let mut buf = vec![Complex::new(F::zero(), F::zero()); n];
    buf[..spectrum.len()].copy_from_slice(spectrum);
    for f in 1..n / 2 + n % 2 {
        buf[n - f] = spectrum[f].conj();
    }
    cache.inverse(n).process(&mut buf);
    let scale = F::one() / sc::<F>(n as f64);
    buf.into_iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_endpoints_and_midpoint() {
        let w = hann_window::<f64>(8);
        assert!(w[0].abs() < 1e-15);
        assert!((w[4] - 1.0).abs() < 1e-15); // periodic Hann peaks at n/2
    }

    #[test]
    fn real_fft_round_trip() {
        let mut cache = FftCache::<f64>::new();
        let frame: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 * 0.1 - 0.5).collect();
        let spec = real_fft_one_sided(&mut cache, &frame);
        let back = one_sided_ifft_real(&mut cache, &spec, 16);
        for (a, b) in frame.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn frame_count_accounting() {
        assert_eq!(frame_count(960, 960, 480), 1);
        assert_eq!(frame_count(1440, 960, 480), 2);
        assert_eq!(frame_count(959, 960, 480), 0);
        assert_eq!(frame_count(48_000, 960, 480), 99);
    }
}
