//! Named parameter registry.
//!
//! Every trainable tensor in a model lives here under a stable dotted name
//! (`enc.rgb.patch.w`, `fuse.block0.attn.wq`, ...). Model components keep
//! `ParamId` handles; the optimizer and checkpoint code iterate the registry
//! in insertion order, which is part of the checkpoint contract.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters still get gradients but are skipped by the optimizer.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.register_with(name, value, true)
    }

    pub fn register_with(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value: value.with_grad(),
            trainable,
        });
        id
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

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Overwrite gradients from a backward pass (one entry per param).
    pub fn store_grads(&mut self, grads: &[(ParamId, &[f64])]) {
        for p in &mut self.entries {
            p.value.zero_grad();
        }
        for &(id, g) in grads {
            self.entries[id.0].value.set_grad(g.to_vec());
        }
    }

    /// Replace a parameter's data by name, checking the shape. Used when
    /// loading checkpoints.
    pub fn load_named(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self
            .lookup(name)
            .ok_or_else(|| Error::data(format!("checkpoint names unknown parameter {name}")))?;
        let current = &mut self.entries[id.0].value;
        if current.shape() != shape {
            return Err(Error::data(format!(
                "checkpoint parameter {name} has shape {shape:?}, model expects {:?}",
                current.shape()
            )));
        }
        *current = Tensor::new(shape.to_vec(), data)?.with_grad();
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }
}
