//! Model configuration and parameter construction.
//!
//! Parameter naming is stable and forms the checkpoint schema:
//!
//! ```text
//! band_split.{k}.norm.{gamma,beta[,mean,var]}   [2*bins_k]
//! band_split.{k}.fc.{w,b}                       w: [2*bins_k, N]
//! block.{l}.band.low_fwd.{wx,wh,b}              wx: [N, 4H], wh: [H, 4H]
//! block.{l}.band.low_bwd.{wx,wh,b}
//! block.{l}.band.high.{wx,wh,b}                 (only when split_band < K)
//! block.{l}.band.fc_low.{w,b}                   w: [2H, N]
//! block.{l}.band.fc_high.{w,b}                  w: [H, N]
//! block.{l}.band.norm.{gamma,beta[,mean,var]}   [N]
//! block.{l}.seq.fwd.{wx,wh,b}
//! block.{l}.seq.bwd.{wx,wh,b}                   (offline only)
//! block.{l}.seq.fc.{w,b}                        w: [H or 2H, N]
//! block.{l}.seq.norm.{gamma,beta[,mean,var]}    [N]
//! mask.{k}.fc1.{w,b}                            w: [N, 4N]
//! mask.{k}.fc2.{w,b}                            w: [4N, 8*bins_k]
//! enroll.fc.{w,b}                               w: [E, N] (personalized only)
//! ```
//!
//! Per-band feature vectors use the split complex layout
//! `[re(bins) | im(bins)]`; the mask MLP emits
//! `[mask_re | mask_im | residual_re | residual_im]`, each `bins_k` wide
//! (after the GLU halves the `fc2` output).
//!
//! LSTM gate order is `i, f, g, o`; the forget-gate bias starts at +1. All
//! other weights are uniform in `±1/sqrt(fan_in)`; norm scales start at 1,
//! shifts at 0; batch-norm running statistics start at mean 0, variance 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scheme::BandSplitScheme;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::nn::{sc, ParamStore, Scalar};

/// Normalization family: layer norm for offline models, batch norm for
/// online (causal) models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Layer,
    Batch,
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.99;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Feature dimension N.
    pub n_feat: usize,
    /// Number of band+sequence modeling blocks.
    pub num_blocks: usize,
    /// LSTM hidden size per direction (2N in the reference configs).
    pub lstm_hidden: usize,
    /// Mask-MLP hidden size (4N in the reference configs).
    pub mlp_hidden: usize,
    pub causal: bool,
    pub personalized: bool,
    /// Enrollment embedding dimensionality E.
    pub embed_dim: usize,
    pub stft: StftConfig,
    /// Band-table override; `None` uses the default table for the rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_edges: Option<Vec<usize>>,
    /// Bi/uni boundary override; `None` derives it from the 16 kHz rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_band: Option<usize>,
}

impl ModelConfig {
    /// 48 kHz full-band config: N=96, six blocks, H=192, MLP 384.
    pub fn full_band_48k(causal: bool, personalized: bool) -> Self {
        ModelConfig {
            sample_rate: 48_000,
            n_feat: 96,
            num_blocks: 6,
            lstm_hidden: 192,
            mlp_hidden: 384,
            causal,
            personalized,
            embed_dim: 256,
            stft: StftConfig::full_band_48k(),
            band_edges: None,
            split_band: None,
        }
    }

    /// 16 kHz wide-band config: N=128, six blocks, H=256, MLP 512.
    pub fn wide_band_16k(causal: bool, personalized: bool) -> Self {
        ModelConfig {
            sample_rate: 16_000,
            n_feat: 128,
            num_blocks: 6,
            lstm_hidden: 256,
            mlp_hidden: 512,
            causal,
            personalized,
            embed_dim: 256,
            stft: StftConfig::wide_band_16k(),
            band_edges: None,
            split_band: None,
        }
    }

    pub fn norm_kind(&self) -> NormKind {
        if self.causal {
            NormKind::Batch
        } else {
            NormKind::Layer
        }
    }

    pub fn scheme(&self) -> Result<BandSplitScheme> {
        let mut scheme = match &self.band_edges {
            Some(edges) => BandSplitScheme::from_edges(
                edges.clone(),
                self.split_band.unwrap_or(edges.len() - 1),
                self.stft.n_bins(),
            )?,
            None => BandSplitScheme::for_stft(&self.stft)?,
        };
        if let Some(b) = self.split_band {
            scheme.split_band = b;
            if b == 0 || b > scheme.n_bands() {
                return Err(Error::Config(format!(
                    "split_band {b} outside 1..={}",
                    scheme.n_bands()
                )));
            }
        }
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stft.sample_rate != self.sample_rate {
            return Err(Error::Config("stft rate differs from model rate".into()));
        }
        if self.n_feat == 0 || self.lstm_hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("zero-sized feature dims".into()));
        }
        if self.personalized && self.embed_dim == 0 {
            return Err(Error::Config("personalized model needs embed_dim > 0".into()));
        }
        self.scheme().map(|_| ())
    }
}

/// A model: its config, resolved band scheme and parameter store.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub scheme: BandSplitScheme,
    pub store: ParamStore<F>,
}

fn add_norm<F: Scalar>(
    store: &mut ParamStore<F>,
    prefix: &str,
    dim: usize,
    kind: NormKind,
) -> Result<()> {
    store.add_const(format!("{prefix}.gamma"), vec![dim], 1.0, true)?;
    store.add_const(format!("{prefix}.beta"), vec![dim], 0.0, true)?;
    if kind == NormKind::Batch {
        store.add_const(format!("{prefix}.mean"), vec![dim], 0.0, false)?;
        store.add_const(format!("{prefix}.var"), vec![dim], 1.0, false)?;
    }
    Ok(())
}

fn add_lstm<F: Scalar>(
    store: &mut ParamStore<F>,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.add_uniform(format!("{prefix}.wx"), vec![in_dim, 4 * hidden], in_dim, rng)?;
    store.add_uniform(format!("{prefix}.wh"), vec![hidden, 4 * hidden], hidden, rng)?;
    let mut bias = vec![F::zero(); 4 * hidden];
    for b in bias.iter_mut().take(2 * hidden).skip(hidden) {
        *b = F::one(); // forget gate
    }
    store.add(format!("{prefix}.b"), vec![4 * hidden], bias, true)?;
    Ok(())
}

fn add_fc<F: Scalar>(
    store: &mut ParamStore<F>,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.add_uniform(format!("{prefix}.w"), vec![in_dim, out_dim], in_dim, rng)?;
    store.add_const(format!("{prefix}.b"), vec![out_dim], 0.0, true)?;
    Ok(())
}

impl<F: Scalar> Model<F> {
    /// Fresh model with seeded deterministic initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let scheme = config.scheme()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let n = config.n_feat;
        let h = config.lstm_hidden;
        let kind = config.norm_kind();
        let k_bands = scheme.n_bands();
        let split = scheme.split_band;

        for k in 0..k_bands {
            let width = 2 * scheme.band_width(k);
            add_norm(&mut store, &format!("band_split.{k}.norm"), width, kind)?;
            add_fc(&mut store, &format!("band_split.{k}.fc"), width, n, &mut rng)?;
        }

        for l in 0..config.num_blocks {
            add_lstm(&mut store, &format!("block.{l}.band.low_fwd"), n, h, &mut rng)?;
            add_lstm(&mut store, &format!("block.{l}.band.low_bwd"), n, h, &mut rng)?;
            add_fc(&mut store, &format!("block.{l}.band.fc_low"), 2 * h, n, &mut rng)?;
            if split < k_bands {
                add_lstm(&mut store, &format!("block.{l}.band.high"), n, h, &mut rng)?;
                add_fc(&mut store, &format!("block.{l}.band.fc_high"), h, n, &mut rng)?;
            }
            add_norm(&mut store, &format!("block.{l}.band.norm"), n, kind)?;

            add_lstm(&mut store, &format!("block.{l}.seq.fwd"), n, h, &mut rng)?;
            if !config.causal {
                add_lstm(&mut store, &format!("block.{l}.seq.bwd"), n, h, &mut rng)?;
            }
            let seq_fc_in = if config.causal { h } else { 2 * h };
            add_fc(&mut store, &format!("block.{l}.seq.fc"), seq_fc_in, n, &mut rng)?;
            add_norm(&mut store, &format!("block.{l}.seq.norm"), n, kind)?;
        }

        for k in 0..k_bands {
            let width = scheme.band_width(k);
            add_fc(&mut store, &format!("mask.{k}.fc1"), n, config.mlp_hidden, &mut rng)?;
            add_fc(&mut store, &format!("mask.{k}.fc2"), config.mlp_hidden, 8 * width, &mut rng)?;
        }

        if config.personalized {
            // Identity gating: zero weight, unit bias. A fresh personalized
            // model starts as a function that ignores the enrollment, and a
            // warm start from a non-personalized checkpoint reproduces that
            // model exactly.
            store.add_const("enroll.fc.w", vec![config.embed_dim, n], 0.0, true)?;
            store.add_const("enroll.fc.b", vec![n], 1.0, true)?;
        }

        Ok(Model {
            config,
            scheme,
            store,
        })
    }

    pub fn norm_eps(&self) -> F {
        sc::<F>(NORM_EPS)
    }
}
