//! Named parameter storage shared by every model variant.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order used for optimizer state and serialization.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Panics on a duplicate name; names are fixed by the model layout.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Overwrite values from `other`, which must hold the same names with the
    /// same shapes. The offending tensor is named on mismatch.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, tensor) in other.iter() {
            let id = self.id(name).ok_or_else(|| {
                Error::Checkpoint(format!("unexpected tensor `{name}` for this model"))
            })?;
            let expected = self.get(id).shape();
            if tensor.shape() != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {} but the model expects {expected}",
                    tensor.shape()
                )));
            }
        }
        if let Some(missing) = self.names.iter().find(|n| other.id(n).is_none()) {
            return Err(Error::Checkpoint(format!("missing tensor `{missing}`")));
        }
        for (name, tensor) in other.iter() {
            let id = self.id(name).expect("checked above");
            self.tensors[id.0] = tensor.clone();
        }
        Ok(())
    }
}
