//! MetricGAN discriminator and the LSGAN-style objective pair.
//!
//! The discriminator regresses the normalized quality score of an
//! (estimate, reference) spectrogram pair; its input is a two-channel stack
//! of power-compressed magnitudes. Output is sigmoid-bounded to `[0, 1]`,
//! matching the quality-score range.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::Spectrogram;
use crate::error::Result;
use crate::nn::{sc, ParamStore, Scalar, Tape, Var};

const COMPRESS_P: f64 = 0.3;
const LEAKY_SLOPE: f64 = 0.2;

/// Pair discriminator: 4 stride-2 conv layers over the 2-channel compressed
/// magnitude stack, global mean pooling, FC head, sigmoid.
#[derive(Debug, Clone)]
pub struct MgdDiscriminator<F> {
    pub store: ParamStore<F>,
    channels: Vec<usize>,
}

impl<F: Scalar> MgdDiscriminator<F> {
    pub fn init(seed: u64) -> Result<Self> {
        Self::with_channels(vec![8, 16, 32, 32], seed)
    }

    pub fn with_channels(channels: Vec<usize>, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 2usize;
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
        Ok(MgdDiscriminator { store, channels })
    }

    /// Score of (estimate, reference) with the estimate entering as tape
    /// variables `[F, T]` each, so generator gradients can flow through it.
    pub fn score_vars(
        &self,
        tape: &mut Tape<F>,
        est_re: Var,
        est_im: Var,
        reference: &Spectrogram<F>,
    ) -> Result<Var> {
        let re2 = tape.mul(est_re, est_re)?;
        let im2 = tape.mul(est_im, est_im)?;
        let sq = tape.add(re2, im2)?;
        let mag = tape.sqrt(sq);
        let est_cmp = tape.powf(mag, sc::<F>(COMPRESS_P));
        let ref_cmp = compressed_constant(tape, reference);
        self.score_stack(tape, est_cmp, ref_cmp)
    }

    /// Score of a constant (estimate, reference) pair; gradients flow only
    /// into the discriminator parameters.
    pub fn score_const(
        &self,
        tape: &mut Tape<F>,
        est: &Spectrogram<F>,
        reference: &Spectrogram<F>,
    ) -> Result<Var> {
        let est_cmp = compressed_constant(tape, est);
        let ref_cmp = compressed_constant(tape, reference);
        self.score_stack(tape, est_cmp, ref_cmp)
    }

    fn score_stack(&self, tape: &mut Tape<F>, est_cmp: Var, ref_cmp: Var) -> Result<Var> {
        let shape = tape.shape(est_cmp).to_vec();
        let (f_bins, t_frames) = (shape[0], shape[1]);
        let stacked = tape.concat_rows(&[est_cmp, ref_cmp])?;
        let mut x = tape.reshape(stacked, vec![2, f_bins, t_frames])?;
        for i in 0..self.channels.len() {
            let w = tape.param_named(&self.store, &format!("conv{i}.w"))?;
            let b = tape.param_named(&self.store, &format!("conv{i}.b"))?;
            let y = tape.conv2d(x, w, b, 2, 1)?;
            x = tape.leaky_relu(y, sc::<F>(LEAKY_SLOPE));
        }
        let pooled = tape.global_mean_pool(x)?;
        let w = tape.param_named(&self.store, "head.w")?;
        let b = tape.param_named(&self.store, "head.b")?;
        let logit = tape.matmul(pooled, w)?;
        let logit = tape.add_bias(logit, b)?;
        let out = tape.sigmoid(logit);
        tape.reshape(out, vec![1])
    }
}

fn compressed_constant<F: Scalar>(tape: &mut Tape<F>, spec: &Spectrogram<F>) -> Var {
    let p = sc::<F>(COMPRESS_P);
    let mut vals = vec![F::zero(); spec.n_bins * spec.n_frames];
    for f in 0..spec.n_bins {
        for t in 0..spec.n_frames {
            vals[f * spec.n_frames + t] = spec.at(f, t).norm().powf(p);
        }
    }
    tape.constant(vec![spec.n_bins, spec.n_frames], vals)
}

/// `(1 - d)^2` from a scalar discriminator output.
pub fn lsgan_generator_loss<F: Scalar>(tape: &mut Tape<F>, d_est: Var) -> Var {
    let one = tape.scalar(F::one());
    let diff = tape.sub(one, d_est).expect("scalar shapes");
    tape.mul(diff, diff).expect("scalar shapes")
}

/// `(1 - D(S,S))^2 + (q_est - D(Shat,S))^2 + (q_noisy - D(X,S))^2`.
pub fn mgd_discriminator_loss<F: Scalar>(
    tape: &mut Tape<F>,
    d_clean: Var,
    d_est: Var,
    d_noisy: Var,
    q_est: F,
    q_noisy: F,
) -> Var {
    let one = tape.scalar(F::one());
    let t1 = tape.sub(one, d_clean).expect("scalar shapes");
    let t1 = tape.mul(t1, t1).expect("scalar shapes");
    let qe = tape.scalar(q_est);
    let t2 = tape.sub(qe, d_est).expect("scalar shapes");
    let t2 = tape.mul(t2, t2).expect("scalar shapes");
    let qn = tape.scalar(q_noisy);
    let t3 = tape.sub(qn, d_noisy).expect("scalar shapes");
    let t3 = tape.mul(t3, t3).expect("scalar shapes");
    let sum = tape.add(t1, t2).expect("scalar shapes");
    tape.add(sum, t3).expect("scalar shapes")
}

/// Generator-side MGD term `(1 - D(Shat, S))^2` with gradients through the
/// estimated spectrogram.
pub fn mgd_generator_term<F: Scalar>(
    tape: &mut Tape<F>,
    disc: &MgdDiscriminator<F>,
    est_re: Var,
    est_im: Var,
    reference: &Spectrogram<F>,
) -> Result<Var> {
    let d = disc.score_vars(tape, est_re, est_im, reference)?;
    Ok(lsgan_generator_loss(tape, d))
}

/// Discriminator-side loss over the three constant pairs.
pub fn mgd_discriminator_term<F: Scalar>(
    tape: &mut Tape<F>,
    disc: &MgdDiscriminator<F>,
    noisy: &Spectrogram<F>,
    clean: &Spectrogram<F>,
    estimate: &Spectrogram<F>,
    q_est: F,
    q_noisy: F,
) -> Result<Var> {
    let d_clean = disc.score_const(tape, clean, clean)?;
    let d_est = disc.score_const(tape, estimate, clean)?;
    let d_noisy = disc.score_const(tape, noisy, clean)?;
    Ok(mgd_discriminator_loss(
        tape, d_clean, d_est, d_noisy, q_est, q_noisy,
    ))
}
