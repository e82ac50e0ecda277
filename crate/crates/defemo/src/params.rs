//! Named, ordered parameter collections shared by the model, optimizer and
//! checkpoint code. Insertion order is part of the contract: it fixes the
//! checkpoint manifest order and the optimizer update order.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Scalar, Tensor};
use indexmap::IndexMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        *self.get_mut(name)? = tensor;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.entries.shift_remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.insert(name, t.cast());
        }
        out
    }

    /// Register every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>) -> BoundParams {
        let mut ids = IndexMap::new();
        for (name, tensor) in self.iter() {
            let id = graph.leaf(name, tensor.clone(), true);
            ids.insert(name.to_string(), id);
        }
        BoundParams { ids }
    }
}

/// Leaf node handles for one forward/backward pass.
pub struct BoundParams {
    ids: IndexMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collect gradients in parameter order, zero for off-path parameters.
    pub fn gradients<T: Scalar>(&self, graph: &Graph<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, id) in self.iter() {
            out.insert(name, graph.grad_or_zero(id));
        }
        out
    }
}
