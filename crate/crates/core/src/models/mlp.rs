use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_matrix, Bound, ForwardVars, Parameters, Role};
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor};

/// Fully connected ReLU classifier, optionally with RMSNorm before each
/// nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub use_norm: bool,
    #[serde(default)]
    pub bias: bool,
}

pub(crate) fn hidden_name(i: usize) -> String {
    format!("hidden{i}")
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("MLP needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("MLP extents must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn init(&self, rng: &mut ChaCha8Rng) -> Parameters {
        let mut params = Parameters::new();
        let mut fan_in = self.input_dim;
        for (i, &width) in self.hidden_dims.iter().enumerate() {
            let name = hidden_name(i);
            params.insert(name.clone(), fan_in_matrix(rng, fan_in, width), Role::Weight);
            if self.bias {
                params.insert(format!("{name}.bias"), Tensor::zeros(&[width]), Role::Bias);
            }
            if self.use_norm {
                params.insert(format!("{name}.scale"), Tensor::filled(&[width], 1.0), Role::NormScale);
            }
            fan_in = width;
        }
        params.insert("head", fan_in_matrix(rng, fan_in, self.num_classes), Role::Head);
        if self.bias {
            params.insert("head.bias", Tensor::zeros(&[self.num_classes]), Role::Bias);
        }
        params
    }

    pub(crate) fn forward_on<'t>(&self, tape: &'t Tape, params: &Bound<'t>, x: &Tensor) -> Result<ForwardVars<'t>> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "MLP expects [n, {}] input, got {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        let mut h = tape.constant(x.clone());
        let mut hidden = Vec::with_capacity(self.hidden_dims.len());
        for i in 0..self.hidden_dims.len() {
            let name = hidden_name(i);
            let mut z = h.matmul(params.var(&name)?)?;
            if self.bias {
                z = z.add_row(params.var(&format!("{name}.bias"))?)?;
            }
            if self.use_norm {
                z = z.rms_norm(params.var(&format!("{name}.scale"))?)?;
            }
            h = z.relu();
            hidden.push((name, z, h));
        }
        let mut logits = h.matmul(params.var("head")?)?;
        if self.bias {
            logits = logits.add_row(params.var("head.bias")?)?;
        }
        Ok(ForwardVars {
            logits,
            hidden,
            attention: None,
        })
    }
}
