//! Training objectives: multi-resolution reconstruction loss, MetricGAN
//! generator/discriminator pair, multi-resolution spectrogram discriminators
//! and the multi-mel loss.

mod mgd;
mod mr;
mod mrsd;

pub use mgd::{
    lsgan_generator_loss, mgd_discriminator_loss, mgd_discriminator_term, mgd_generator_term,
    MgdDiscriminator,
};
pub use mr::{mr_loss, mr_loss_components, mr_loss_graph, MrLossConfig};
pub use mrsd::{
    mrsd_adversarial_gen, mrsd_discriminator_loss, mrsd_discriminator_term, mrsd_generator_terms,
    multi_mel_loss, multi_mel_loss_graph, MrsdConfig, MrsdDiscriminators, MrsdGeneratorTerms,
};

use crate::audio_io::Waveform;
use crate::error::Result;
use crate::metrics;

/// Weights of the combined MetricGAN finetuning objective.
#[derive(Debug, Clone, Copy)]
pub struct MetricGanConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for MetricGanConfig {
    fn default() -> Self {
        MetricGanConfig {
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 1.0,
        }
    }
}

/// Maps a raw wide-band quality score onto `[0, 1]`: `(raw + 0.5) / 5`,
/// clamped.
pub fn q_normalize(raw_quality: f64) -> f64 {
    ((raw_quality + 0.5) / 5.0).clamp(0.0, 1.0)
}

/// `lambda1*L_p + lambda2*L_s + lambda3*L_g`.
pub fn combined_objective(l_p: f64, l_s: f64, l_g: f64, cfg: &MetricGanConfig) -> f64 {
    cfg.lambda1 * l_p + cfg.lambda2 * l_s + cfg.lambda3 * l_g
}

/// Pluggable quality scorer feeding the MetricGAN discriminator targets.
/// Implementations return values in `[0, 1]`.
pub trait QualityOracle {
    fn score(&self, est: &Waveform, reference: &Waveform) -> Result<f64>;
}

/// Desk-scale stand-in for an external perceptual metric:
/// `sigmoid(si_snr / 10)`, monotone in SI-SNR (which is capped at +-40 dB).
pub struct SiSnrProxy;

impl QualityOracle for SiSnrProxy {
    fn score(&self, est: &Waveform, reference: &Waveform) -> Result<f64> {
        let snr = metrics::si_snr(est, reference)?;
        Ok((1.0 / (1.0 + (-snr / 10.0).exp())).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_normalize_pins() {
        assert_eq!(q_normalize(4.5), 1.0);
        assert_eq!(q_normalize(-0.5), 0.0);
        assert_eq!(q_normalize(2.0), 0.5);
        // clamping outside the nominal range
        assert_eq!(q_normalize(9.0), 1.0);
        assert_eq!(q_normalize(-3.0), 0.0);
    }

    #[test]
    fn combined_objective_defaults() {
        let cfg = MetricGanConfig::default();
        assert_eq!(combined_objective(0.0, 0.0, 0.0, &cfg), 0.0);
        assert_eq!(combined_objective(2.0, 2.0, 1.0, &cfg), 3.0);
        let no_gan = MetricGanConfig {
            lambda3: 0.0,
            ..Default::default()
        };
        assert_eq!(combined_objective(2.0, 2.0, 123.0, &no_gan), 2.0);
    }

    #[test]
    fn proxy_extremes_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Waveform::new((0..4000).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000);

        // identical signals cap at +40 dB -> sigmoid(4)
        let hi = SiSnrProxy.score(&s, &s).unwrap();
        assert!(hi >= 0.98);

        // pure orthogonal noise: project-out leaves everything as error
        let noise = Waveform::new(
            (0..4000)
                .map(|i| if i % 2 == 0 { 0.3 } else { -0.3 })
                .collect(),
            16_000,
        );
        let ortho = {
            // Gram-Schmidt against s so <e, s> = 0
            let dot: f64 = noise
                .samples
                .iter()
                .zip(&s.samples)
                .map(|(&n, &x)| n as f64 * x as f64)
                .sum();
            let ss: f64 = s.samples.iter().map(|&x| (x as f64).powi(2)).sum();
            let coef = dot / ss;
            Waveform::new(
                noise
                    .samples
                    .iter()
                    .zip(&s.samples)
                    .map(|(&n, &x)| (n as f64 - coef * x as f64) as f32)
                    .collect(),
                16_000,
            )
        };
        let lo = SiSnrProxy.score(&ortho, &s).unwrap();
        assert!(lo <= 0.02, "got {lo}");

        // non-increasing in the amount of added noise
        let mut prev = f64::INFINITY;
        for alpha in [0.0f64, 0.1, 0.3, 1.0, 3.0] {
            let est = Waveform::new(
                s.samples
                    .iter()
                    .zip(&ortho.samples)
                    .map(|(&x, &n)| (x as f64 + alpha * n as f64) as f32)
                    .collect(),
                16_000,
            );
            let score = SiSnrProxy.score(&est, &s).unwrap();
            assert!(score <= prev + 1e-12, "alpha {alpha}: {score} > {prev}");
            prev = score;
        }
    }
}
