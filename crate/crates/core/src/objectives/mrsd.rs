//! Multi-resolution spectrogram discriminators and the multi-mel loss.
//!
//! One single-input LSGAN discriminator per STFT window length in
//! {2, 4, 8, 16, 32, 64} ms, judging raw magnitude spectrograms with a
//! linear (unbounded) scalar head. The multi-mel loss is the MSE between
//! magnitude mel spectrograms of target and estimate over {64, 128, 256}
//! filterbanks, computed on the model's analysis STFT.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{mel_spectrogram, stft_slice, MelBank, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{sc, ParamStore, Scalar, Tape, Var};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct MrsdConfig {
    pub sample_rate: u32,
    pub windows_ms: Vec<f64>,
    pub mel_banks: Vec<usize>,
}

impl MrsdConfig {
    pub fn for_rate(sample_rate: u32) -> Self {
        MrsdConfig {
            sample_rate,
            windows_ms: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            mel_banks: vec![64, 128, 256],
        }
    }
}

/// The per-resolution discriminator bank.
#[derive(Debug, Clone)]
pub struct MrsdDiscriminators<F> {
    pub config: MrsdConfig,
    pub stores: Vec<ParamStore<F>>,
    channels: Vec<usize>,
}

impl<F: Scalar> MrsdDiscriminators<F> {
    pub fn init(config: MrsdConfig, seed: u64) -> Result<Self> {
        Self::with_channels(config, vec![8, 16, 32], seed)
    }

    pub fn with_channels(config: MrsdConfig, channels: Vec<usize>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stores = Vec::with_capacity(config.windows_ms.len());
        for _ in 0..config.windows_ms.len() {
            let mut store = ParamStore::new();
            let mut cin = 1usize;
            for (i, &cout) in channels.iter().enumerate() {
                store.add_uniform(
                    format!("conv{i}.w"),
                    vec![cout, cin, 3, 3],
                    cin * 9,
                    &mut rng,
                )?;
                store.add_const(format!("conv{i}.b"), vec![cout], 0.0, true)?;
                cin = cout;
            }
            store.add_uniform("head.w", vec![cin, 1], cin, &mut rng)?;
            store.add_const("head.b", vec![1], 0.0, true)?;
            stores.push(store);
        }
        Ok(MrsdDiscriminators {
            config,
            stores,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    fn stft_config(&self, k: usize) -> Result<StftConfig> {
        let w = self.config.windows_ms[k];
        StftConfig::new(self.config.sample_rate, w, w / 2.0)
    }

    /// Score a waveform tape variable with discriminator `k`; gradients flow
    /// through the signal (and into the discriminator's parameters).
    pub fn score_wave_var(&self, tape: &mut Tape<F>, k: usize, wave: Var) -> Result<Var> {
        let cfg = self.stft_config(k)?;
        let win = cfg.window_len();
        let hop = cfg.hop_len();
        let n_bins = cfg.n_bins();
        let spec = tape.stft(wave, win, hop)?;
        let re = tape.slice_rows(spec, 0, n_bins)?;
        let im = tape.slice_rows(spec, n_bins, 2 * n_bins)?;
        let re2 = tape.mul(re, re)?;
        let im2 = tape.mul(im, im)?;
        let sq = tape.add(re2, im2)?;
        let mag = tape.sqrt(sq);
        self.score_mag(tape, k, mag)
    }

    /// Score a constant waveform with discriminator `k`.
    pub fn score_wave_const(&self, tape: &mut Tape<F>, k: usize, wave: &[F]) -> Result<Var> {
        let cfg = self.stft_config(k)?;
        let spec = stft_slice(wave, &cfg)?;
        let mut mags = vec![F::zero(); spec.n_bins * spec.n_frames];
        for f in 0..spec.n_bins {
            for t in 0..spec.n_frames {
                mags[f * spec.n_frames + t] = spec.at(f, t).norm();
            }
        }
        let mag = tape.constant(vec![spec.n_bins, spec.n_frames], mags);
        self.score_mag(tape, k, mag)
    }

    fn score_mag(&self, tape: &mut Tape<F>, k: usize, mag: Var) -> Result<Var> {
        let shape = tape.shape(mag).to_vec();
        let mut x = tape.reshape(mag, vec![1, shape[0], shape[1]])?;
        let store = &self.stores[k];
        for i in 0..self.channels.len() {
            let w = tape.param_named(store, &format!("conv{i}.w"))?;
            let b = tape.param_named(store, &format!("conv{i}.b"))?;
            let y = tape.conv2d(x, w, b, 2, 1)?;
            x = tape.leaky_relu(y, sc::<F>(LEAKY_SLOPE));
        }
        let pooled = tape.global_mean_pool(x)?;
        let w = tape.param_named(store, "head.w")?;
        let b = tape.param_named(store, "head.b")?;
        let logit = tape.matmul(pooled, w)?;
        let logit = tape.add_bias(logit, b)?;
        tape.reshape(logit, vec![1])
    }
}

/// `(1/K) * sum_k (1 - d_k)^2` from scalar discriminator outputs.
pub fn mrsd_adversarial_gen<F: Scalar>(tape: &mut Tape<F>, d_fake: &[Var]) -> Var {
    let mut acc: Option<Var> = None;
    for &d in d_fake {
        let one = tape.scalar(F::one());
        let diff = tape.sub(one, d).expect("scalar shapes");
        let sq = tape.mul(diff, diff).expect("scalar shapes");
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq).expect("scalar shapes"),
        });
    }
    let total = acc.expect("at least one discriminator");
    tape.scale(total, F::one() / sc::<F>(d_fake.len() as f64))
}

/// `(1/K) * sum_k ((1 - d_real_k)^2 + d_fake_k^2)`.
pub fn mrsd_discriminator_loss<F: Scalar>(
    tape: &mut Tape<F>,
    d_real: &[Var],
    d_fake: &[Var],
) -> Var {
    debug_assert_eq!(d_real.len(), d_fake.len());
    let mut acc: Option<Var> = None;
    for (&dr, &df) in d_real.iter().zip(d_fake) {
        let one = tape.scalar(F::one());
        let diff = tape.sub(one, dr).expect("scalar shapes");
        let real_term = tape.mul(diff, diff).expect("scalar shapes");
        let fake_term = tape.mul(df, df).expect("scalar shapes");
        let sum = tape.add(real_term, fake_term).expect("scalar shapes");
        acc = Some(match acc {
            None => sum,
            Some(a) => tape.add(a, sum).expect("scalar shapes"),
        });
    }
    let total = acc.expect("at least one discriminator");
    tape.scale(total, F::one() / sc::<F>(d_real.len() as f64))
}

/// Multi-mel MSE between target and estimate (plain evaluation).
pub fn multi_mel_loss<F: Scalar>(
    s: &[F],
    s_hat: &[F],
    stft: &StftConfig,
    banks: &[usize],
) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::param("length mismatch"));
    }
    let spec_s = stft_slice(s, stft)?;
    let spec_e = stft_slice(s_hat, stft)?;
    let mut total = 0.0;
    for &n_mels in banks {
        let bank = MelBank::<F>::new(n_mels, stft.n_bins(), stft.sample_rate)?;
        let mel_s = mel_spectrogram(&spec_s, &bank)?;
        let mel_e = mel_spectrogram(&spec_e, &bank)?;
        let mse: f64 = mel_s
            .iter()
            .zip(&mel_e)
            .map(|(&a, &b)| {
                let d = (a - b).to_f64().unwrap();
                d * d
            })
            .sum::<f64>()
            / mel_s.len() as f64;
        total += mse;
    }
    Ok(total / banks.len() as f64)
}

/// Tape version of the multi-mel loss with gradients through the estimate.
pub fn multi_mel_loss_graph<F: Scalar>(
    tape: &mut Tape<F>,
    est_wave: Var,
    target: &[F],
    stft: &StftConfig,
    banks: &[usize],
) -> Result<Var> {
    let win = stft.window_len();
    let hop = stft.hop_len();
    let n_bins = stft.n_bins();
    let spec = tape.stft(est_wave, win, hop)?;
    let n_frames = tape.shape(spec)[1];
    let re = tape.slice_rows(spec, 0, n_bins)?;
    let im = tape.slice_rows(spec, n_bins, 2 * n_bins)?;
    let re2 = tape.mul(re, re)?;
    let im2 = tape.mul(im, im)?;
    let sq = tape.add(re2, im2)?;
    let mag = tape.sqrt(sq); // [F, T]

    let tgt_spec = stft_slice(target, stft)?;
    debug_assert_eq!(tgt_spec.n_frames, n_frames);

    let mut acc: Option<Var> = None;
    for &n_mels in banks {
        let bank = MelBank::<F>::new(n_mels, n_bins, stft.sample_rate)?;
        let weights = tape.constant(vec![n_mels, n_bins], bank.weights.clone());
        let mel_est = tape.matmul(weights, mag)?; // [n_mels, T]

        let tgt_mel_tmaj = mel_spectrogram(&tgt_spec, &bank)?; // frame-major
        let mut tgt = vec![F::zero(); n_mels * n_frames];
        for t in 0..n_frames {
            for m in 0..n_mels {
                tgt[m * n_frames + t] = tgt_mel_tmaj[t * n_mels + m];
            }
        }
        let tgt = tape.constant(vec![n_mels, n_frames], tgt);
        let diff = tape.sub(mel_est, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let mse = tape.mean_all(sq);
        acc = Some(match acc {
            None => mse,
            Some(a) => tape.add(a, mse)?,
        });
    }
    let total = acc.ok_or_else(|| Error::param("no mel banks configured"))?;
    Ok(tape.scale(total, F::one() / sc::<F>(banks.len() as f64)))
}

pub struct MrsdGeneratorTerms {
    /// `(1/K) sum_k (1 - D_k(Shat))^2`
    pub adversarial: Var,
    pub l_mmel: Var,
}

/// Generator-side MRSD terms with gradients through the estimated waveform.
/// The caller adds `L_MR` (see [`super::mr_loss_graph`]) to complete `L_G`.
pub fn mrsd_generator_terms<F: Scalar>(
    tape: &mut Tape<F>,
    discs: &MrsdDiscriminators<F>,
    est_wave: Var,
    target: &[F],
    model_stft: &StftConfig,
) -> Result<MrsdGeneratorTerms> {
    let mut d_fake = Vec::with_capacity(discs.len());
    for k in 0..discs.len() {
        d_fake.push(discs.score_wave_var(tape, k, est_wave)?);
    }
    let adversarial = mrsd_adversarial_gen(tape, &d_fake);
    let l_mmel =
        multi_mel_loss_graph(tape, est_wave, target, model_stft, &discs.config.mel_banks)?;
    Ok(MrsdGeneratorTerms {
        adversarial,
        l_mmel,
    })
}

/// Discriminator-side `L_D` over constant target/estimate waveforms.
pub fn mrsd_discriminator_term<F: Scalar>(
    tape: &mut Tape<F>,
    discs: &MrsdDiscriminators<F>,
    target: &[F],
    estimate: &[F],
) -> Result<Var> {
    let mut d_real = Vec::with_capacity(discs.len());
    let mut d_fake = Vec::with_capacity(discs.len());
    for k in 0..discs.len() {
        d_real.push(discs.score_wave_const(tape, k, target)?);
        d_fake.push(discs.score_wave_const(tape, k, estimate)?);
    }
    Ok(mrsd_discriminator_loss(tape, &d_real, &d_fake))
}
