//! The MLP classifier and the single-attention-block transformer.
//!
//! Both record their hidden preactivations and post-ReLU features so the
//! metrics module can compute covariance and activation-pattern changes.

mod mlp;
mod params;
mod transformer;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use mlp::MlpSpec;
pub use params::{Bound, Param, ParamGrads, Parameters, Role};
pub use transformer::{TransformerSpec, SEQ_LEN};

use crate::error::{Error, Result};
use crate::ndcore::{finite_diff_check, GradCheck, Tape, Tensor, Var};

/// Model input: dense feature rows or 5-token sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Dense(Tensor),
    Tokens(Vec<[usize; SEQ_LEN]>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Dense(t) => t.rows(),
            Inputs::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by `index`, in that order.
    pub fn select(&self, index: &[usize]) -> Inputs {
        match self {
            Inputs::Dense(t) => {
                let d = t.cols();
                let mut data = Vec::with_capacity(index.len() * d);
                for &i in index {
                    data.extend_from_slice(t.row(i));
                }
                Inputs::Dense(Tensor::new(&[index.len(), d], data).expect("non-empty selection"))
            }
            Inputs::Tokens(t) => Inputs::Tokens(index.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardVars<'t> {
    pub logits: Var<'t>,
    /// `(layer id, preactivation, post-ReLU feature)` per hidden layer.
    pub hidden: Vec<(String, Var<'t>, Var<'t>)>,
    pub attention: Option<Var<'t>>,
}

/// Plain values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub layer_features: BTreeMap<String, Tensor>,
    pub preactivations: BTreeMap<String, Tensor>,
    /// Concatenated head outputs of the attention block, transformer only.
    pub attention_output: Option<Tensor>,
}

impl ForwardVars<'_> {
    pub fn to_output(&self) -> ForwardOutput {
        ForwardOutput {
            logits: self.logits.value().clone(),
            layer_features: self
                .hidden
                .iter()
                .map(|(k, _, f)| (k.clone(), f.value().clone()))
                .collect(),
            preactivations: self
                .hidden
                .iter()
                .map(|(k, p, _)| (k.clone(), p.value().clone()))
                .collect(),
            attention_output: self.attention.map(|a| a.value().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpSpec),
    Transformer(TransformerSpec),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp(s) => s.validate(),
            ModelSpec::Transformer(s) => s.validate(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::Mlp(s) => s.num_classes,
            ModelSpec::Transformer(s) => s.modulus,
        }
    }

    /// Fan-in Gaussian initialization, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<Parameters> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            ModelSpec::Mlp(s) => s.init(&mut rng),
            ModelSpec::Transformer(s) => s.init(&mut rng),
        })
    }

    pub fn forward_on<'t>(&self, tape: &'t Tape, params: &Bound<'t>, inputs: &Inputs) -> Result<ForwardVars<'t>> {
        match (self, inputs) {
            (ModelSpec::Mlp(s), Inputs::Dense(x)) => s.forward_on(tape, params, x),
            (ModelSpec::Transformer(s), Inputs::Tokens(t)) => s.forward_on(tape, params, t),
            _ => Err(Error::Contract("input kind does not match model family".into())),
        }
    }

    /// Untracked forward pass.
    pub fn forward(&self, params: &Parameters, inputs: &Inputs) -> Result<ForwardOutput> {
        let tape = Tape::new();
        let bound = params.bind_constant(&tape);
        Ok(self.forward_on(&tape, &bound, inputs)?.to_output())
    }

    /// Layers whose output feeds straight into a normalization layer, making
    /// the network invariant to rescaling that layer.
    pub fn normalized_layers(&self) -> Vec<String> {
        match self {
            ModelSpec::Mlp(s) if s.use_norm => (0..s.hidden_dims.len()).map(mlp::hidden_name).collect(),
            _ => Vec::new(),
        }
    }

    /// ReLU layers reported in `ForwardOutput::preactivations`, in order.
    pub fn feature_layers(&self) -> Vec<String> {
        match self {
            ModelSpec::Mlp(s) => (0..s.hidden_dims.len()).map(mlp::hidden_name).collect(),
            ModelSpec::Transformer(_) => vec!["mlp".to_string()],
        }
    }

    /// Name of the final readout layer.
    pub fn head_name(&self) -> &'static str {
        "head"
    }
}

/// Max over logits of `|f(θ with layer scaled by α) − f(θ)| / (|f(θ)| + 1e-12)`.
///
/// The layer's weight and, if present, its bias are both scaled.
pub fn scale_invariance_deviation(
    model: &ModelSpec,
    params: &Parameters,
    layer: &str,
    alpha: f64,
    inputs: &Inputs,
) -> Result<f64> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::Domain(format!("scale factor must be finite and nonzero, got {alpha}")));
    }
    if !model.normalized_layers().iter().any(|l| l == layer) {
        return Err(Error::Contract(format!("layer `{layer}` is not followed by a normalization layer")));
    }
    let base = model.forward(params, inputs)?.logits;
    let mut scaled = params.clone();
    for name in [layer.to_string(), format!("{layer}.bias")] {
        if let Ok(t) = scaled.tensor_mut(&name) {
            *t = t.scale(alpha);
        }
    }
    let moved = model.forward(&scaled, inputs)?.logits;
    Ok(base
        .data()
        .iter()
        .zip(moved.data())
        .map(|(f, g)| (g - f).abs() / (f.abs() + 1e-12))
        .fold(0.0, f64::max))
}

/// Finite-difference check of the cross-entropy gradient with respect to
/// every parameter tensor.
pub fn model_gradient_check(
    model: &ModelSpec,
    params: &Parameters,
    inputs: &Inputs,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheck> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let tensors: Vec<Tensor> = params.iter().map(|(_, p)| p.tensor.clone()).collect();
    finite_diff_check(&tensors, eps, |tape, leaves| {
        let bound = Bound::from_vars(names.iter().cloned().zip(leaves.iter().copied()));
        model.forward_on(tape, &bound, inputs)?.logits.cross_entropy(labels)
    })
}

/// Shrink-and-perturb: every weight, head and embedding tensor becomes
/// `shrink * W + noise_scale * W_fresh` with `W_fresh` a fresh fan-in sample.
///
/// `noise_scale` defaults to `1 - shrink`. Normalization scales and biases
/// are left alone; initial norms are kept.
pub fn shrink_perturb(params: &Parameters, shrink: f64, noise_scale: Option<f64>, seed: u64) -> Result<Parameters> {
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::Domain(format!("shrink factor must lie in (0, 1), got {shrink}")));
    }
    let noise = noise_scale.unwrap_or(1.0 - shrink);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    for (_, p) in out.iter_mut() {
        let std = match p.role {
            Role::Weight | Role::Head => 1.0 / (p.tensor.rows() as f64).sqrt(),
            Role::Embedding => 1.0,
            Role::NormScale | Role::Bias => continue,
        };
        for v in p.tensor.data_mut() {
            let fresh: f64 = StandardNormal.sample(&mut rng);
            *v = shrink * *v + noise * std * fresh;
        }
    }
    Ok(out)
}

/// `[fan_in, fan_out]` matrix with entries `N(0, 1/fan_in)`, so each output
/// unit's weight vector has expected squared norm 1.
pub(crate) fn fan_in_matrix(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    gaussian(rng, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape, data).expect("positive extents")
}
