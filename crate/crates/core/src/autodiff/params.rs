use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of trainable tensors in a fixed registration order.
///
/// Values are reference counted so a graph can hold them without copying;
/// mutation goes through [`Arc::make_mut`] and never disturbs a live graph.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar trainable parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// All parameters flattened in registration order.
    pub fn flatten(&self) -> Vec<Float> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for v in &self.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    pub fn check_same_structure(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} parameter tensors",
                self.len(),
                other.len()
            )));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if self.names[i] != other.names[i] || a.shape() != b.shape() {
                return Err(Error::StructureMismatch(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    self.names[i],
                    a.shape(),
                    other.names[i],
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Copies every value from `other`, which must be structurally identical.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_structure(other)?;
        self.values.clone_from(&other.values);
        Ok(())
    }
}
