use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{Gradients, ParamKey, Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Optimizer group; each group has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Conv,
    Gru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub group: ParamGroup,
}

/// Owns the trainable tensors of one model under stable hierarchical names.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Param<T>>,
    frozen: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            frozen: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            store: self.id,
            index: id.0,
        }
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Frozen stores record their tensors as constants on the tape.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn var(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param(self.key(id), &self.params[id.0].tensor, !self.frozen)
    }

    /// Adds every gradient the sweep produced for this store.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<(), TensorError> {
        let id = self.id;
        for (index, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.param(ParamKey { store: id, index }) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// Hash over names, shapes and exact bit patterns of every value.
    /// Name of the first parameter whose squared norm is not finite
    /// (NaN, infinite or overflowing entries).
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.tensor.data().iter().map(|&v| v * v).sum::<T>().is_finite())
            .map(|p| p.name.as_str())
    }

    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            h.write(p.name.as_bytes());
            for &d in p.tensor.shape() {
                h.write_usize(d);
            }
            let mut bytes = Vec::with_capacity(p.tensor.len() * T::DTYPE.size());
            p.tensor.data().iter().for_each(|v| v.write_le(&mut bytes));
            h.write(&bytes);
        }
        h.finish()
    }
}
