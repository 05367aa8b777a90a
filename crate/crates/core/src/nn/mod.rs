//! Deterministic tensor/autograd engine.
//!
//! Eager evaluation with a recorded tape: every op computes its value when the
//! node is created and [`Graph::backward`] replays the tape in reverse. No
//! graph compiler, no implicit broadcasting beyond the few ops that need it.
//! All hot loops route through [`backend`], which has a sequential
//! implementation and (behind the `parallel` feature) a rayon one producing
//! bit-identical results.

pub mod attention;
pub mod backend;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Named, optionally trainable tensor. Names are stable and hierarchical
/// (`"temporal.block0.attn.q.weight"`), unique within a model.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let grad = Tensor::zeros(tensor.shape());
        Self {
            name: name.into(),
            tensor,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Ordered collection of parameters with name lookup.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a parameter. Panics on a duplicate name: that is a model
    /// construction bug, not a runtime condition.
    pub fn insert(&mut self, param: Parameter) {
        assert!(
            self.get(&param.name).is_none(),
            "duplicate parameter name {}",
            param.name
        );
        self.params.push(param);
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}
