//! Minimal deterministic tensor/layer library with reverse-mode gradients.
//!
//! The library implements exactly the operations the band-split model and its
//! discriminators need: fully-connected layers, LSTM cells, layer/batch
//! normalization, GLU, small 2-D convolutions, STFT/iSTFT as linear ops, and
//! the reductions used by the losses. Gradients are computed over a dynamic
//! tape ([`tape::Tape`]); parameters live in a [`params::ParamStore`] and are
//! updated by [`optim::Adam`] with global-norm clipping.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training/inference and in `f64` for finite-difference gradient tests.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + rustfft::FftNum
    + std::iter::Sum
    + Default
    + std::fmt::Display
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand conversion from `f64` literals into the working scalar type.
#[inline]
pub fn sc<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 -> Scalar")
}

pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
