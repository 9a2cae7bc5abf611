//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Tape`] records primitive operations as they run. Parameters live in a
//! [`ParamStore`] that the tape borrows immutably, so one store can back many
//! concurrent forward passes. Batch-norm running statistics are returned from
//! the tape as pending updates rather than written in place.

mod conv;
mod netp;
mod tape;

use std::collections::HashMap;

use crate::{Error, Result};

pub use conv::{conv_out_size, Conv2dSpec};
pub use netp::{read_netp, write_netp, NETP_MAGIC};
pub use tape::{BnMode, BnUpdate, Gradients, Tape, Var};

/// Dense 4D tensor in `(n, c, h, w)` row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 4], v: f64) -> Self {
        Self { shape, data: vec![v; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!("tensor {shape:?} needs {len} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples `[start, start + count)` along the batch axis.
    pub fn slice_n(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape[0] {
            return Err(Error::shape("batch slice out of range"));
        }
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Ok(Tensor {
            shape: [count, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }

    /// Stacks tensors of equal `(c, h, w)` along the batch axis.
    pub fn stack_n(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to stack"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return Err(Error::shape("stacked tensors differ in (c, h, w)"));
            }
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Ok(Tensor { shape: [n, c, h, w], data })
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// False for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Named parameters and buffers in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, tensor, trainable });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Writes pending batch-norm running-stat updates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            self.get_mut(u.mean).data_mut().copy_from_slice(&u.new_mean);
            self.get_mut(u.var).data_mut().copy_from_slice(&u.new_var);
        }
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must
    /// match the existing layout exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, network expects {}",
                values.len(),
                self.entries.len()
            )));
        }
        for (name, t) in values {
            let id = self.id(&name).ok_or_else(|| Error::Format(format!("unknown tensor {name} in checkpoint")))?;
            if self.get(id).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {name}: checkpoint shape {:?}, expected {:?}",
                    t.shape(),
                    self.get(id).shape()
                )));
            }
            *self.get_mut(id) = t;
        }
        Ok(())
    }
}
