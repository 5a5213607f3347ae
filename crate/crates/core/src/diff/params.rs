use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Real;

use super::tensor::Tensor;
use super::DiffError;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named trainable tensors with gradient accumulators.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Param<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    /// Clones get a fresh identity so graphs never confuse the copies.
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub(crate) fn store_id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// True when every gradient accumulator is exactly zero.
    pub fn grads_are_zero(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.data().iter().all(|&g| g == T::zero()))
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<(), DiffError> {
        self.check_compatible(other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParamStore<T>) -> Result<(), DiffError> {
        if self.params.len() != other.params.len() {
            return Err(DiffError::Shape(format!(
                "parameter count {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(DiffError::Shape(format!(
                    "parameter {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Same names and shapes, values converted to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast());
        }
        out
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn named_values(&self) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}

/// `target ← τ·online + (1 − τ)·target` for every parameter.
pub fn polyak_update<T: Real>(
    online: &ParamStore<T>,
    target: &mut ParamStore<T>,
    tau: T,
) -> Result<(), DiffError> {
    target.check_compatible(online)?;
    let keep = T::one() - tau;
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        for (tv, &ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
            *tv = tau * ov + keep * *tv;
        }
    }
    Ok(())
}
