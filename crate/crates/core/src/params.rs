//! Named, shape-checked trainable weights.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MesinError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How freshly registered weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every entry from U(-1, 1).
    #[default]
    Uniform,
    /// Matrices from U(-1/sqrt(cols), 1/sqrt(cols)); vectors (biases and
    /// scoring vectors) start at zero, so attention and fusion start uniform.
    Scaled,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Register a zero-filled tensor under a unique name.
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.insert(name.into(), Tensor::zeros(shape))
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(MesinError::contract(format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replace a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != tensor.shape() {
            return Err(MesinError::shape(
                "parameter store",
                format!(
                    "{} has shape {:?}, got {:?}",
                    self.names[id.0],
                    current.shape(),
                    tensor.shape()
                ),
            ));
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Every name and shape must agree, in order.
    pub fn check_layout(&self, other: &ParameterStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(MesinError::shape(
                "parameter layout",
                format!("{} tensors expected, found {}", self.len(), other.len()),
            ));
        }
        for ((n1, t1), (n2, t2)) in self.iter().zip(other.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(MesinError::shape(
                    "parameter layout",
                    format!(
                        "expected {n1} {:?}, found {n2} {:?}",
                        t1.shape(),
                        t2.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn initialise(&mut self, scheme: InitScheme, rng: &mut impl Rng) {
        for t in &mut self.tensors {
            let bound = match scheme {
                InitScheme::Uniform => 1.0,
                InitScheme::Scaled if t.rank() < 2 => {
                    t.data_mut().fill(0.0);
                    continue;
                }
                InitScheme::Scaled => 1.0 / (t.shape()[1] as f64).sqrt(),
            };
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    /// Put every tensor on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.parameter(t.clone())).collect(),
        }
    }
}

/// Tape handles of a bound [`ParameterStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in store order, for callers that place the leaves themselves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
