//! Learnable parameter blocks and the store that owns them.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique parameter identifier. Ids grow monotonically, so a store's
/// iteration order is its creation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<Scalar>,
    /// Frozen blocks receive gradients but are skipped by the optimizer.
    pub frozen: bool,
    /// Whether decoupled weight decay applies (conv and linear weights).
    pub decay: bool,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        let decay = value.rank() >= 2;
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            value,
            grad: vec![0.0; n],
            frozen: false,
            decay,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
///
/// Prefix reads (the shared mixer slices) produce gradients shorter than the
/// block; they are accumulated into the leading entries.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) params: BTreeMap<ParamId, Vec<Scalar>>,
    pub(crate) inputs: BTreeMap<usize, Vec<Scalar>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[Scalar]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Gradient with respect to an input leaf created by
    /// [`Tape::input`](crate::tape::Tape::input).
    pub fn input(&self, var: crate::tape::Var) -> Option<&[Scalar]> {
        self.inputs.get(&var.index()).map(Vec::as_slice)
    }

    pub(crate) fn add_param(&mut self, id: ParamId, g: &[Scalar]) {
        let slot = self.params.entry(id).or_default();
        if slot.len() < g.len() {
            slot.resize(g.len(), 0.0);
        }
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }
}

/// Owner of parameter blocks, iterated in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blocks: BTreeMap<ParamId, ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, block: ParamBlock) -> ParamId {
        let id = block.id;
        self.blocks.insert(id, block);
        id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(ParamBlock::new(name, value))
    }

    pub fn get(&self, id: ParamId) -> &ParamBlock {
        self.blocks
            .get(&id)
            .unwrap_or_else(|| panic!("parameter {id:?} not in this store"))
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        self.blocks
            .get_mut(&id)
            .unwrap_or_else(|| panic!("parameter {id:?} not in this store"))
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn remove(&mut self, id: ParamId) -> Option<ParamBlock> {
        self.blocks.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamBlock> {
        self.blocks.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamBlock> {
        self.blocks.values_mut()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.blocks.values().map(ParamBlock::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.blocks.values_mut().for_each(ParamBlock::zero_grad);
    }

    /// Adds every gradient whose id lives in this store into its block.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.params {
            if let Some(block) = self.blocks.get_mut(id) {
                for (dst, v) in block.grad.iter_mut().zip(g) {
                    *dst += v;
                }
            }
        }
    }

    /// Moves all blocks of `other` into this store.
    pub fn absorb(&mut self, other: ParamStore) {
        self.blocks.extend(other.blocks);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_clears_accumulated_values() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[3]));
        let mut grads = Gradients::default();
        grads.add_param(id, &[1.0, 2.0, 3.0]);
        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad, vec![2.0, 4.0, 6.0]);
        store.zero_grad();
        assert!(store.get(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn prefix_gradients_land_on_leading_entries() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[4]));
        let mut grads = Gradients::default();
        grads.add_param(id, &[1.0]);
        grads.add_param(id, &[1.0, 1.0, 1.0]);
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad, vec![2.0, 1.0, 1.0, 0.0]);
    }
}
