//! On-the-fly noisy mixture simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SourceKind, SourcePool};
use crate::audio_io::Waveform;
use crate::dsp::fft::{one_sided_ifft_real, real_fft_one_sided, FftCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub snr_db: (f64, f64),
    pub sir_db: (f64, f64),
    pub rir_prob: f64,
    /// (noise only, noise + interferer, interferer only) for personalized
    /// training; non-personalized draws are always noise-only.
    pub mix_proportions: (f64, f64, f64),
    pub segment_s: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            snr_db: (-5.0, 20.0),
            sir_db: (-5.0, 20.0),
            rir_prob: 0.2,
            mix_proportions: (0.5, 0.3, 0.2),
            segment_s: 6.0,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.mix_proportions;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::Config("mixture proportions must sum to 1".into()));
        }
        if self.snr_db.0 > self.snr_db.1 || self.sir_db.0 > self.sir_db.1 {
            return Err(Error::Config("SNR/SIR ranges must be ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.rir_prob) {
            return Err(Error::Config("rir_prob must be in [0, 1]".into()));
        }
        if self.segment_s <= 0.0 {
            return Err(Error::Config("segment length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixCategory {
    NoiseOnly,
    NoiseAndInterferer,
    InterfererOnly,
}

/// The audited random decisions behind one simulated example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Draws {
    pub category: MixCategory,
    pub rir_applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<f64>,
    pub target_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interferer_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir_index: Option<usize>,
}

/// One simulated training example.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub mixture: Waveform,
    /// Pre-reverberation clean target (the training target).
    pub target_anechoic: Waveform,
    /// Scaled additive components, for audits: the reverberant target plus
    /// these reconstructs the mixture exactly.
    pub scaled_noise: Option<Waveform>,
    pub scaled_interferer: Option<Waveform>,
    pub target_reverberant: Waveform,
    pub enrollment: Option<Waveform>,
    pub draws: Draws,
}

/// Per-example generator seed; independent of worker assignment so results
/// are reproducible regardless of parallelism.
pub fn derive_example_seed(global_seed: u64, example_index: u64) -> u64 {
    // splitmix64 over the pair
    let mut z = global_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(example_index)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scales the noise so that `10*log10(E_speech / E_noise)` equals `snr_db`
/// exactly (full-segment energies), then mixes.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    if speech.len() != noise.len() {
        return Err(Error::param(format!(
            "length mismatch: {} vs {}",
            speech.len(),
            noise.len()
        )));
    }
    let es = speech.energy();
    let en = noise.energy();
    if es <= 0.0 {
        return Err(Error::Simulation("silent speech segment".into()));
    }
    if en <= 0.0 {
        return Err(Error::Simulation("silent noise segment".into()));
    }
    let gain = (es / en).sqrt() * 10f64.powf(-snr_db / 20.0);
    let scaled: Vec<f32> = noise.samples.iter().map(|&v| (v as f64 * gain) as f32).collect();
    let mixture: Vec<f32> = speech
        .samples
        .iter()
        .zip(&scaled)
        .map(|(&s, &n)| s + n)
        .collect();
    Ok((
        Waveform::new(mixture, speech.sample_rate),
        Waveform::new(scaled, speech.sample_rate),
    ))
}

/// Convolves with a room impulse response and aligns the direct path: the
/// reverberant output is shifted left by `argmax(|rir|)` so it lines up with
/// the dry reference, then truncated to the input length.
pub fn apply_rir(speech: &Waveform, rir: &Waveform) -> Result<(Waveform, Waveform)> {
    if rir.is_empty() {
        return Err(Error::Simulation("empty RIR".into()));
    }
    let peak = rir
        .samples
        .iter()
        .map(|v| v.abs())
        .fold(0.0f32, f32::max);
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Simulation("all-zero RIR".into()));
    }
    let delay = rir
        .samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let full = convolve(&speech.samples, &rir.samples);
    let n = speech.len();
    let mut aligned = vec![0.0f32; n];
    for (i, slot) in aligned.iter_mut().enumerate() {
        let j = i + delay;
        if j < full.len() {
            *slot = full[j];
        }
    }
    Ok((
        Waveform::new(aligned, speech.sample_rate),
        speech.clone(),
    ))
}

/// Full linear convolution; FFT-based once the kernel stops being tiny.
fn convolve(x: &[f32], h: &[f32]) -> Vec<f32> {
    let out_len = x.len() + h.len() - 1;
    if h.len() <= 128 {
        let mut out = vec![0.0f32; out_len];
        for (j, &hj) in h.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let hj = hj as f64;
            for (i, &xi) in x.iter().enumerate() {
                out[i + j] += (xi as f64 * hj) as f32;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut cache = FftCache::<f64>::new();
    let mut xp = vec![0.0f64; n];
    let mut hp = vec![0.0f64; n];
    for (i, &v) in x.iter().enumerate() {
        xp[i] = v as f64;
    }
    for (i, &v) in h.iter().enumerate() {
        hp[i] = v as f64;
    }
    let fx = real_fft_one_sided(&mut cache, &xp);
    let fh = real_fft_one_sided(&mut cache, &hp);
    let prod: Vec<num_complex::Complex<f64>> = fx.iter().zip(&fh).map(|(a, b)| a * b).collect();
    let full = one_sided_ifft_real(&mut cache, &prod, n);
    full[..out_len].iter().map(|&v| v as f32).collect()
}

/// Loops or randomly crops a source to exactly `len` samples. Cropping draws
/// one position from the generator; looping draws nothing.
fn fit_length(w: &Waveform, len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    use std::cmp::Ordering;
    match w.len().cmp(&len) {
        Ordering::Equal => w.clone(),
        Ordering::Greater => {
            let start = rng.gen_range(0..=w.len() - len);
            Waveform::new(w.samples[start..start + len].to_vec(), w.sample_rate)
        }
        Ordering::Less => {
            let mut samples = Vec::with_capacity(len);
            while samples.len() < len {
                let take = (len - samples.len()).min(w.len());
                samples.extend_from_slice(&w.samples[..take]);
            }
            Waveform::new(samples, w.sample_rate)
        }
    }
}

/// Draws one training example.
///
/// Draw order is fixed (category, target, crop, RIR decision and pick, noise
/// pick/crop/SNR, interferer pick/crop/SIR, enrollment pick/crop), so a seed
/// fully determines the example.
pub fn simulate_example(
    pool: &SourcePool,
    cfg: &SimulationConfig,
    personalized: bool,
    example_seed: u64,
) -> Result<MixtureSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed);

    let category = if personalized {
        let u: f64 = rng.gen::<f64>();
        let (p_noise, p_both, _) = cfg.mix_proportions;
        if u < p_noise {
            MixCategory::NoiseOnly
        } else if u < p_noise + p_both {
            MixCategory::NoiseAndInterferer
        } else {
            MixCategory::InterfererOnly
        }
    } else {
        MixCategory::NoiseOnly
    };
    let wants_noise = category != MixCategory::InterfererOnly;
    let wants_interferer = category != MixCategory::NoiseOnly;

    let n_speech = pool.count(SourceKind::Speech);
    if n_speech == 0 {
        return Err(Error::Simulation("catalog has no speech sources".into()));
    }
    let target_index = rng.gen_range(0..n_speech);
    let target_full = pool.waveform(SourceKind::Speech, target_index)?;
    let seg_len = (cfg.segment_s * target_full.sample_rate as f64).round() as usize;
    let target = fit_length(&target_full, seg_len, &mut rng);

    let rir_applied = rng.gen::<f64>() < cfg.rir_prob;
    let (rir_index, rir) = if rir_applied {
        let n_rir = pool.count(SourceKind::Rir);
        if n_rir == 0 {
            return Err(Error::Simulation("catalog has no RIR sources".into()));
        }
        let idx = rng.gen_range(0..n_rir);
        (Some(idx), Some(pool.waveform(SourceKind::Rir, idx)?))
    } else {
        (None, None)
    };
    let (target_reverberant, target_anechoic) = match &rir {
        Some(r) => apply_rir(&target, r)?,
        None => (target.clone(), target.clone()),
    };

    let mut mixture = target_reverberant.clone();
    let mut scaled_noise = None;
    let mut snr_db = None;
    let mut noise_index = None;
    if wants_noise {
        let n_noise = pool.count(SourceKind::Noise);
        if n_noise == 0 {
            return Err(Error::Simulation("catalog has no noise sources".into()));
        }
        let idx = rng.gen_range(0..n_noise);
        let noise_full = pool.waveform(SourceKind::Noise, idx)?;
        let noise = fit_length(&noise_full, seg_len, &mut rng);
        let snr = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
        let (mixed, scaled) = mix_at_snr(&target_reverberant, &noise, snr)?;
        mixture = mixed;
        scaled_noise = Some(scaled);
        snr_db = Some(snr);
        noise_index = Some(idx);
    }

    let mut scaled_interferer = None;
    let mut sir_db = None;
    let mut interferer_index = None;
    if wants_interferer {
        let n_intf = pool.count(SourceKind::Interferer);
        if n_intf == 0 {
            return Err(Error::Simulation("catalog has no interferer sources".into()));
        }
        let idx = rng.gen_range(0..n_intf);
        let intf_full = pool.waveform(SourceKind::Interferer, idx)?;
        let intf = fit_length(&intf_full, seg_len, &mut rng);
        let sir = rng.gen_range(cfg.sir_db.0..=cfg.sir_db.1);
        let (_, scaled) = mix_at_snr(&target_reverberant, &intf, sir)?;
        let samples: Vec<f32> = mixture
            .samples
            .iter()
            .zip(&scaled.samples)
            .map(|(&m, &i)| m + i)
            .collect();
        mixture = Waveform::new(samples, mixture.sample_rate);
        scaled_interferer = Some(scaled);
        sir_db = Some(sir);
        interferer_index = Some(idx);
    }

    // Enrollment clip: another utterance of the same speaker when available,
    // otherwise an independent crop of the target utterance. The same RIR
    // (and direct-path alignment) is applied as to the target.
    let enrollment = if personalized {
        let speaker = pool
            .record(SourceKind::Speech, target_index)
            .and_then(|r| r.speaker_id.clone());
        let candidates: Vec<usize> = (0..n_speech)
            .filter(|&i| {
                i != target_index
                    && speaker.is_some()
                    && pool
                        .record(SourceKind::Speech, i)
                        .and_then(|r| r.speaker_id.as_ref())
                        == speaker.as_ref()
            })
            .collect();
        let enroll_source = if candidates.is_empty() {
            target_index
        } else {
            candidates[rng.gen_range(0..candidates.len())]
        };
        let enroll_full = pool.waveform(SourceKind::Speech, enroll_source)?;
        let clip = fit_length(&enroll_full, seg_len, &mut rng);
        let clip = match &rir {
            Some(r) => apply_rir(&clip, r)?.0,
            None => clip,
        };
        Some(clip)
    } else {
        None
    };

    Ok(MixtureSpec {
        mixture,
        target_anechoic,
        scaled_noise,
        scaled_interferer,
        target_reverberant,
        enrollment,
        draws: Draws {
            category,
            rir_applied,
            snr_db,
            sir_db,
            target_index,
            noise_index,
            interferer_index,
            rir_index,
        },
    })
}
