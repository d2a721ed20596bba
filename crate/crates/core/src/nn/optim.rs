//! Adam with bias correction, and joint gradient-norm clipping.

use super::params::ParamStore;
use super::{sc, Scalar};
use crate::error::{Error, Result};

/// Adam state for one parameter store. `m`/`v` are laid out exactly like the
/// store's tensors so they can be round-tripped through checkpoints.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        Adam {
            beta1: sc::<F>(0.9),
            beta2: sc::<F>(0.999),
            eps: sc::<F>(1e-8),
            step: 0,
            m: store.iter().map(|(_, t)| vec![F::zero(); t.numel()]).collect(),
            v: store.iter().map(|(_, t)| vec![F::zero(); t.numel()]).collect(),
        }
    }

    /// One update over all trainable tensors. Fails on a NaN gradient,
    /// naming the offending parameter.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: F) -> Result<()> {
        self.step += 1;
        let t = sc::<F>(self.step as f64);
        let bc1 = F::one() - self.beta1.powf(t);
        let bc2 = F::one() - self.beta2.powf(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (idx, id) in ids.into_iter().enumerate() {
            let tensor = store.get_mut(id);
            if !tensor.trainable {
                continue;
            }
            if tensor.grad.iter().any(|g| g.is_nan()) {
                return Err(Error::Training(format!(
                    "NaN gradient in parameter {}",
                    tensor.name
                )));
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..tensor.data.len() {
                let g = tensor.grad[i];
                m[i] = self.beta1 * m[i] + (F::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (F::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] = tensor.data[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers by store index, for checkpointing.
    pub fn moments(&self, idx: usize) -> (&[F], &[F]) {
        (&self.m[idx], &self.v[idx])
    }

    pub fn moments_mut(&mut self, idx: usize) -> (&mut Vec<F>, &mut Vec<F>) {
        (&mut self.m[idx], &mut self.v[idx])
    }
}

/// Rescales all trainable gradients jointly iff their global L2 norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm<F: Scalar>(store: &mut ParamStore<F>, max_norm: F) -> F {
    let mut sq = F::zero();
    for (_, t) in store.iter() {
        if !t.trainable {
            continue;
        }
        for &g in &t.grad {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > F::zero() {
        let scale = max_norm / norm;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let t = store.get_mut(id);
            if !t.trainable {
                continue;
            }
            for g in t.grad.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
