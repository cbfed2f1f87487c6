use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Gradients, Tape, Tensor, Var};

/// What a tensor is for; decides whether projection and decay touch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Linear-layer matrix. Projected by default.
    Weight,
    /// Multiplicative scale of a normalization layer. Subject to scale decay.
    NormScale,
    Embedding,
    /// Final readout matrix.
    Head,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub role: Role,
}

/// Named parameter tensors plus their Frobenius norms at initialization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    entries: BTreeMap<String, Param>,
    initial_norms: BTreeMap<String, f64>,
}

pub type ParamGrads = BTreeMap<String, Tensor>;

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and records its current norm as the initial norm.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, role: Role) {
        let name = name.into();
        self.initial_norms.insert(name.clone(), tensor.frobenius_norm());
        self.entries.insert(name, Param { tensor, role });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.entries.get(name).map(|p| p.role)
    }

    pub fn initial_norm(&self, name: &str) -> Option<f64> {
        self.initial_norms.get(name).copied()
    }

    pub fn initial_norms(&self) -> &BTreeMap<String, f64> {
        &self.initial_norms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norms(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.tensor.frobenius_norm()))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    /// Registers every tensor as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), tape.param(p.tensor.clone())))
                .collect(),
        }
    }

    /// Registers every tensor as a constant; used for evaluation passes.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), tape.constant(p.tensor.clone())))
                .collect(),
        }
    }
}

/// Parameters registered on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t>)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradient per parameter name, zero-filled where no path reached.
    pub fn collect(&self, grads: &Gradients) -> ParamGrads {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}
