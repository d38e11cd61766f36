//! Named parameter store with deterministic iteration order.

use indexmap::IndexMap;

use crate::array::Array;
use crate::autodiff::Node;
use crate::scalar::Scalar;

/// Map from parameter name to leaf node, iterated in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    entries: IndexMap<String, Node<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// Register a parameter. Panics on duplicate names: every parameter must
    /// map to exactly one optimizer state slot.
    pub fn insert(&mut self, name: impl Into<String>, value: Array<S>) -> Node<S> {
        let name = name.into();
        let node = Node::parameter(value);
        let prev = self.entries.insert(name.clone(), node.clone());
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
        node
    }

    pub fn get(&self, name: &str) -> Option<&Node<S>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Node<S>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|n| n.value().len()).sum()
    }

    pub fn zero_grads(&self) {
        for node in self.entries.values() {
            node.zero_grad();
        }
    }

    /// Deep copy: fresh leaf nodes with copied values, zeroed gradients.
    pub fn clone_detached(&self) -> Self {
        let mut out = Self::new();
        for (name, node) in &self.entries {
            out.insert(name.clone(), node.value().clone());
        }
        out
    }

    /// Flatten all parameter values in iteration order.
    pub fn flat_values(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for node in self.entries.values() {
            out.extend_from_slice(node.value().data());
        }
        out
    }
}
