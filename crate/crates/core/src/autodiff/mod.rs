//! Dense `f64` tensors with a reverse-mode tape.
//!
//! The tape records every forward op; [`Tape::backward`] replays it once in
//! reverse and adds the resulting gradients into the [`ParamStore`]. Gradients
//! accumulate, so training loops call [`ParamStore::zero_grad`] each step.

mod adam;
mod checkpoint;
mod tape;
mod tensor;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{ClarError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every trainable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// `(name, value)` records in registration order, for checkpointing.
    pub fn records(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites parameter values from checkpoint records. Every parameter
    /// must be present with a matching shape; unknown records are ignored.
    pub fn load_records(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = records
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| ClarError::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(ClarError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
