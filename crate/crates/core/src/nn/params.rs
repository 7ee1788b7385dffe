//! Named parameter storage shared by all networks.
//!
//! Entries keep insertion order so optimizer updates, checkpoints, and
//! gradient readback are deterministic. Names prefixed `rs.` hold running
//! statistics (batch-norm state): saved and loaded with the rest, but never
//! touched by the optimizer.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::graph::{Graph, NodeId};

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: HashMap<String, usize>,
}

pub const RUNNING_STAT_PREFIX: &str = "rs.";

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: ArrayD<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        let i = self.index[name];
        &self.values[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        let i = self.index[name];
        &mut self.values[i]
    }

    pub fn value_at(&self, i: usize) -> &ArrayD<f64> {
        &self.values[i]
    }

    pub fn value_at_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        &mut self.values[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_trainable(name: &str) -> bool {
        !name.starts_with(RUNNING_STAT_PREFIX)
    }

    /// Count of scalars across trainable entries.
    pub fn trainable_scalars(&self) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| Self::is_trainable(n))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }
}

/// A ParamSet bound into a graph: every entry became a leaf node. When bound
/// trainably the caller reads gradients back per entry; a frozen binding is
/// plain constants, so the enclosing loss contributes zero gradient to the
/// set by construction.
pub struct Bound {
    node_ids: Vec<NodeId>,
    index: HashMap<String, usize>,
    pub trainable: bool,
}

impl Bound {
    pub fn node(&self, name: &str) -> NodeId {
        self.node_ids[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))]
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.node_ids
    }

    /// Gradients per entry, in ParamSet order. Zero arrays for entries the
    /// loss never touched. A frozen binding always reports zeros: gradients
    /// may flow *through* the network (towards its inputs) but none reach
    /// its parameters.
    pub fn grads(&self, g: &Graph) -> Vec<ArrayD<f64>> {
        self.node_ids
            .iter()
            .map(|&id| {
                if self.trainable {
                    g.grad(id)
                } else {
                    ArrayD::zeros(g.value(id).raw_dim())
                }
            })
            .collect()
    }
}

pub fn bind(g: &mut Graph, params: &ParamSet, trainable: bool) -> Bound {
    let mut node_ids = Vec::with_capacity(params.len());
    let mut index = HashMap::new();
    for (i, (name, value)) in params.iter().enumerate() {
        let id = g.leaf(value.clone());
        node_ids.push(id);
        index.insert(name.to_string(), i);
    }
    Bound {
        node_ids,
        index,
        trainable,
    }
}
