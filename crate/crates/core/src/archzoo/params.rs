use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named parameter tensors in construction order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        if let Some(&slot) = self.index.get(&name) {
            self.tensors[slot] = tensor;
            return slot;
        }
        let slot = self.names.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.tensors.push(tensor);
        slot
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require_slot(&self, name: &str) -> Result<usize> {
        self.slot(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slot(name).map(|s| &self.tensors[s])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slot(name).map(move |s| &mut self.tensors[s])
    }

    #[inline]
    pub fn at(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    #[inline]
    pub fn at_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Per-parameter SHA-256 digests.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.iter().map(|(n, t)| (n.to_string(), t.digest())).collect()
    }

    /// Single digest over all parameters (names and values).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}
