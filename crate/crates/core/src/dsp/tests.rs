use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force DFT of one windowed frame; the independent oracle for `stft`.
fn naive_dft_frame(x: &[f64], window: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    let n_bins = n / 2 + 1;
    (0..n_bins)
        .map(|f| {
            let mut acc = Complex::new(0.0, 0.0);
            for i in 0..n {
                let theta = -2.0 * std::f64::consts::PI * f as f64 * i as f64 / n as f64;
                acc += Complex::new(theta.cos(), theta.sin()) * (x[i] * window[i]);
            }
            acc
        })
        .collect()
}

fn noise(len: usize, rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), rate)
}

fn interior_rel_error(x: &Waveform, y: &[f64], win_len: usize) -> f64 {
    let lo = win_len;
    let hi = x.len() - win_len;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in lo..hi {
        let d = x.samples[i] as f64 - y[i];
        num += d * d;
        den += (x.samples[i] as f64).powi(2);
    }
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn config_sizes_match_both_rates() {
    let c48 = StftConfig::full_band_48k();
    assert_eq!(c48.window_len(), 960);
    assert_eq!(c48.hop_len(), 480);
    assert_eq!(c48.n_bins(), 481);
    let c16 = StftConfig::wide_band_16k();
    assert_eq!(c16.window_len(), 512);
    assert_eq!(c16.hop_len(), 128);
    assert_eq!(c16.n_bins(), 257);
}

#[test]
fn stft_matches_naive_dft() {
    let w = noise(2400, 48_000, 3);
    let cfg = StftConfig::full_band_48k();
    let spec = stft::<f64>(&w, &cfg).unwrap();
    let window = hann_window::<f64>(960);
    for t in [0usize, 2] {
        let frame: Vec<f64> = w.samples[t * 480..t * 480 + 960]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let want = naive_dft_frame(&frame, &window);
        for (f, wv) in want.iter().enumerate() {
            let got = spec.at(f, t);
            assert!((got - wv).norm() < 1e-8, "bin {f} frame {t}");
        }
    }
}

#[test]
fn impulse_frame_is_flat() {
    // A scaled impulse at sample j has |X[f]| = hann[j] at every bin.
    let cfg = StftConfig::full_band_48k();
    let window = hann_window::<f64>(960);
    for j in [0usize, 3, 480] {
        let mut samples = vec![0.0f32; 960];
        samples[j] = 1.0;
        let spec = stft::<f64>(&Waveform::new(samples, 48_000), &cfg).unwrap();
        for f in 0..spec.n_bins {
            assert!(
                (spec.at(f, 0).norm() - window[j]).abs() < 1e-9,
                "bin {f}, impulse at {j}"
            );
        }
    }
}

#[test]
fn sine_1khz_lands_in_bin_20() {
    // 48 kHz / 960-point FFT -> 50 Hz per bin; 1 kHz -> bin 20.
    let n = 4800;
    let samples: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48_000.0).sin() as f32)
        .collect();
    let w = Waveform::new(samples.clone(), 48_000);
    let spec = stft::<f64>(&w, &StftConfig::full_band_48k()).unwrap();
    let t = 2;
    let argmax = (0..spec.n_bins)
        .max_by(|&a, &b| {
            spec.at(a, t)
                .norm()
                .partial_cmp(&spec.at(b, t).norm())
                .unwrap()
        })
        .unwrap();
    assert_eq!(argmax, 20);

    // Cross-check the winning bin with the brute-force DFT.
    let window = hann_window::<f64>(960);
    let frame: Vec<f64> = samples[t * 480..t * 480 + 960].iter().map(|&v| v as f64).collect();
    let oracle = naive_dft_frame(&frame, &window);
    let oracle_argmax = (0..oracle.len())
        .max_by(|&a, &b| oracle[a].norm().partial_cmp(&oracle[b].norm()).unwrap())
        .unwrap();
    assert_eq!(oracle_argmax, 20);
}

#[test]
fn perfect_reconstruction_48k_and_16k() {
    for (cfg, len) in [
        (StftConfig::full_band_48k(), 48_000usize),
        (StftConfig::wide_band_16k(), 16_000),
    ] {
        let w = noise(len, cfg.sample_rate, 17);
        let spec = stft::<f64>(&w, &cfg).unwrap();
        let back = istft_slice(&spec, w.len()).unwrap();
        let err = interior_rel_error(&w, &back, cfg.window_len());
        assert!(err <= 1e-6, "rate {}: err {err}", cfg.sample_rate);
    }
}

#[test]
fn short_signal_is_length_error() {
    let w = noise(500, 48_000, 1);
    match stft::<f64>(&w, &StftConfig::full_band_48k()) {
        Err(Error::Length { .. }) => {}
        other => panic!("expected length error, got {other:?}"),
    }
}

#[test]
fn istft_beyond_support_is_length_error() {
    let w = noise(1920, 48_000, 2);
    let spec = stft::<f64>(&w, &StftConfig::full_band_48k()).unwrap();
    let span = 960 + (spec.n_frames - 1) * 480;
    assert!(istft_slice(&spec, span).is_ok());
    assert!(matches!(
        istft_slice(&spec, span + 1),
        Err(Error::Length { .. })
    ));
}

#[test]
fn zero_spectrogram_gives_zero_waveform() {
    let spec = Spectrogram::<f64>::zeros(StftConfig::full_band_48k(), 5);
    let out = istft_slice(&spec, 960 + 4 * 480).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn stft_linearity() {
    let cfg = StftConfig::wide_band_16k();
    let x = noise(4096, 16_000, 5);
    let y = noise(4096, 16_000, 6);
    let (a, b) = (0.7f64, -1.3f64);
    let mix = Waveform::new(
        x.samples
            .iter()
            .zip(&y.samples)
            .map(|(&xs, &ys)| (a * xs as f64 + b * ys as f64) as f32)
            .collect(),
        16_000,
    );
    let sx = stft::<f64>(&x, &cfg).unwrap();
    let sy = stft::<f64>(&y, &cfg).unwrap();
    let sm = stft::<f64>(&mix, &cfg).unwrap();
    let mut max_rel: f64 = 0.0;
    for (i, m) in sm.data.iter().enumerate() {
        let want = sx.data[i] * a + sy.data[i] * b;
        let denom = want.norm().max(1.0);
        max_rel = max_rel.max((m - want).norm() / denom);
    }
    // f32 waveform quantization dominates; the transform itself is linear.
    assert!(max_rel < 1e-6, "max rel {max_rel}");
}

#[test]
fn parseval_frame_energy() {
    let cfg = StftConfig::wide_band_16k();
    let w = noise(2048, 16_000, 9);
    let spec = stft::<f64>(&w, &cfg).unwrap();
    let window = hann_window::<f64>(512);
    for t in 0..spec.n_frames {
        let time_energy: f64 = (0..512)
            .map(|i| {
                let v = w.samples[t * 128 + i] as f64 * window[i];
                v * v
            })
            .sum();
        let mut freq_energy = 0.0;
        for f in 0..spec.n_bins {
            let one_sided = if f == 0 || f == spec.n_bins - 1 { 1.0 } else { 2.0 };
            freq_energy += one_sided * spec.at(f, t).norm_sqr();
        }
        freq_energy /= 512.0;
        let rel = (time_energy - freq_energy).abs() / time_energy.max(1e-12);
        assert!(rel < 1e-6, "frame {t}: rel {rel}");
    }
}

#[test]
fn power_compress_examples() {
    assert_eq!(power_compress(&[1.0f64], 0.3).unwrap(), vec![1.0]);
    assert_eq!(power_compress(&[0.0f64], 0.3).unwrap(), vec![0.0]);
    let c = power_compress(&[8.0f64], 1.0 / 3.0).unwrap();
    assert!((c[0] - 2.0).abs() < 1e-12);
    assert!(power_compress(&[1.0f64], 0.0).is_err());
    assert!(power_compress(&[1.0f64], -0.3).is_err());
}

/// Independent triangular-filter oracle built from edge arrays, the way
/// librosa-style code does it (different construction route than `MelBank`).
fn naive_mel_weights(n_mels: usize, n_bins: usize, sample_rate: u32) -> Vec<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    let window_len = (n_bins - 1) * 2;
    let bin_hz = sample_rate as f64 / window_len as f64;
    let to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let to_hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let m_hi = to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| to_hz(m_hi * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut w = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, ctr) = (edges[m], edges[m + 1]);
        let hi = if m == n_mels - 1 { edges[m + 2] + bin_hz } else { edges[m + 2] };
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            if f > lo && f < hi {
                let up = (f - lo) / (ctr - lo);
                let down = (hi - f) / (hi - ctr);
                w[m * n_bins + bin] = up.min(down).max(0.0);
            } else if (f - ctr).abs() < 1e-12 {
                w[m * n_bins + bin] = 1.0;
            }
        }
    }
    w
}

#[test]
fn mel_bank_matches_independent_oracle() {
    for n_mels in [64usize, 128] {
        let bank = MelBank::<f64>::new(n_mels, 481, 48_000).unwrap();
        let oracle = naive_mel_weights(n_mels, 481, 48_000);
        for (i, (a, b)) in bank.weights.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-9, "weight {i}: {a} vs {b} ({n_mels} mels)");
        }
    }
}

#[test]
fn mel_spectrogram_zero_and_row_sums() {
    let cfg = StftConfig::full_band_48k();
    let bank = MelBank::<f64>::new(64, 481, 48_000).unwrap();

    let zero = Spectrogram::<f64>::zeros(cfg, 3);
    let mz = mel_spectrogram(&zero, &bank).unwrap();
    assert!(mz.iter().all(|&v| v == 0.0));

    // All-ones magnitude frame -> each mel output equals its row sum.
    let mut ones = Spectrogram::<f64>::zeros(cfg, 1);
    for c in ones.data.iter_mut() {
        *c = Complex::new(1.0, 0.0);
    }
    let m = mel_spectrogram(&ones, &bank).unwrap();
    for (mi, &val) in m.iter().enumerate() {
        let row_sum: f64 = bank.row(mi).iter().sum();
        assert!((val - row_sum).abs() < 1e-9);
    }
}

#[test]
fn mel_energy_ratio_64_vs_128_matches_oracle() {
    let w = noise(4800, 48_000, 23);
    let spec = stft::<f64>(&w, &StftConfig::full_band_48k()).unwrap();
    let mags = spec.magnitudes();

    let apply_naive = |n_mels: usize| -> f64 {
        let weights = naive_mel_weights(n_mels, 481, 48_000);
        let mut total = 0.0;
        for t in 0..spec.n_frames {
            for m in 0..n_mels {
                let mut acc = 0.0;
                for f in 0..481 {
                    acc += weights[m * 481 + f] * mags[t * 481 + f];
                }
                total += acc;
            }
        }
        total
    };

    let b64 = MelBank::<f64>::new(64, 481, 48_000).unwrap();
    let b128 = MelBank::<f64>::new(128, 481, 48_000).unwrap();
    let e64: f64 = mel_spectrogram(&spec, &b64).unwrap().iter().sum();
    let e128: f64 = mel_spectrogram(&spec, &b128).unwrap().iter().sum();
    let rel64 = (e64 - apply_naive(64)).abs() / e64;
    let rel128 = (e128 - apply_naive(128)).abs() / e128;
    assert!(rel64 < 1e-9 && rel128 < 1e-9, "{rel64} {rel128}");
    // Overlap structure keeps the totals within a modest factor.
    let ratio = e128 / e64;
    assert!(ratio > 0.5 && ratio < 4.0, "ratio {ratio}");
}

#[test]
fn mel_dimension_mismatch_is_error() {
    let spec = Spectrogram::<f64>::zeros(StftConfig::wide_band_16k(), 2);
    let bank = MelBank::<f64>::new(64, 481, 48_000).unwrap();
    assert!(mel_spectrogram(&spec, &bank).is_err());
}

mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn reconstruction_property_48k(seed in 0u64..10_000, len in 4_800usize..14_400) {
            let cfg = StftConfig::full_band_48k();
            let w = noise(len, 48_000, seed);
            let spec = stft::<f64>(&w, &cfg).unwrap();
            let back = istft_slice(&spec, w.len().min(960 + (spec.n_frames - 1) * 480)).unwrap();
            let err = interior_rel_error(&w, &back, 960);
            prop_assert!(err <= 1e-6, "err {}", err);
        }

        #[test]
        fn reconstruction_property_16k(seed in 0u64..10_000, len in 2_048usize..8_192) {
            let cfg = StftConfig::wide_band_16k();
            let w = noise(len, 16_000, seed);
            let spec = stft::<f64>(&w, &cfg).unwrap();
            let back = istft_slice(&spec, w.len().min(512 + (spec.n_frames - 1) * 128)).unwrap();
            let err = interior_rel_error(&w, &back, 512);
            prop_assert!(err <= 1e-6, "err {}", err);
        }
    }
}
