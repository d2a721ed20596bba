//! Named parameter storage shared by models, optimizers and checkpoints.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{sc, Scalar};
use crate::error::{Error, Result};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One named parameter tensor with its gradient buffer.
#[derive(Debug, Clone)]
pub struct PTensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
    pub grad: Vec<F>,
    /// Non-trainable tensors (batch-norm running statistics) are skipped by
    /// the optimizer but still serialized into checkpoints.
    pub trainable: bool,
}

impl<F: Scalar> PTensor<F> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered, name-indexed collection of parameter tensors.
///
/// Iteration order is insertion order, which makes every reduction over the
/// store (gradient norms, optimizer sweeps, serialization) deterministic.
/// Each store carries an identity tag so that a tape binding parameters from
/// several stores routes gradients back to the right one; clones share the
/// tag of their original.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    tensors: Vec<PTensor<F>>,
    index: HashMap<String, usize>,
    tag: u64,
}

static NEXT_STORE_TAG: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            index: HashMap::new(),
            tag: NEXT_STORE_TAG.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<F>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::param(format!(
                "parameter {name}: shape {shape:?} expects {numel} values, got {}",
                data.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::param(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id.0);
        self.tensors.push(PTensor {
            name,
            grad: vec![F::zero(); numel],
            shape,
            data,
            trainable,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &PTensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut PTensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&PTensor<F>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut PTensor<F>> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &PTensor<F>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Total number of scalar values across all tensors.
    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<F> = (0..numel)
            .map(|_| sc::<F>(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, shape, data, true)
    }

    pub fn add_const(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        value: f64,
        trainable: bool,
    ) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        self.add(name, shape, vec![sc::<F>(value); numel], trainable)
    }
}
