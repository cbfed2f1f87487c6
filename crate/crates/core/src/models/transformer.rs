use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_matrix, gaussian, Bound, ForwardVars, Parameters, Role};
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor};

/// Tokens per input: `x`, operator, `y`, `=`, blank.
pub const SEQ_LEN: usize = 5;

/// Number tokens `0..p` plus operator, equals and blank.
pub const NUM_SPECIAL_TOKENS: usize = 3;

/// Embedding, one attention block, a two-layer ReLU MLP and an untied
/// readout. With `use_norm`, RMSNorm sits before attention, before the MLP
/// and after the MLP. No biases, no dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub modulus: usize,
    pub d_model: usize,
    pub num_heads: usize,
    /// Total query/key/value width across all heads.
    pub qkv_dim: usize,
    pub ffn_hidden: usize,
    pub use_norm: bool,
}

impl TransformerSpec {
    pub fn new(modulus: usize) -> Self {
        Self {
            modulus,
            d_model: 128,
            num_heads: 4,
            qkv_dim: 32,
            ffn_hidden: 512,
            use_norm: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.modulus + NUM_SPECIAL_TOKENS
    }

    pub fn op_token(&self) -> usize {
        self.modulus
    }

    pub fn eq_token(&self) -> usize {
        self.modulus + 1
    }

    pub fn blank_token(&self) -> usize {
        self.modulus + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(Error::Config(format!("modulus must be at least 2, got {}", self.modulus)));
        }
        if self.num_heads == 0 || self.qkv_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "qkv_dim {} must split evenly over {} heads",
                self.qkv_dim, self.num_heads
            )));
        }
        if self.d_model == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("transformer extents must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn init(&self, rng: &mut ChaCha8Rng) -> Parameters {
        let (d, a, f) = (self.d_model, self.qkv_dim, self.ffn_hidden);
        let mut p = Parameters::new();
        p.insert("embed", gaussian(rng, &[self.vocab_size(), d], 1.0), Role::Embedding);
        p.insert("pos", gaussian(rng, &[SEQ_LEN, d], 1.0), Role::Embedding);
        p.insert("attn.q", fan_in_matrix(rng, d, a), Role::Weight);
        p.insert("attn.k", fan_in_matrix(rng, d, a), Role::Weight);
        p.insert("attn.v", fan_in_matrix(rng, d, a), Role::Weight);
        p.insert("attn.o", fan_in_matrix(rng, a, d), Role::Weight);
        p.insert("mlp.in", fan_in_matrix(rng, d, f), Role::Weight);
        p.insert("mlp.out", fan_in_matrix(rng, f, d), Role::Weight);
        p.insert("head", fan_in_matrix(rng, d, self.modulus), Role::Head);
        if self.use_norm {
            for name in ["norm.attn_in", "norm.mlp_in", "norm.mlp_out"] {
                p.insert(format!("{name}.scale"), Tensor::filled(&[d], 1.0), Role::NormScale);
            }
        }
        p
    }

    pub(crate) fn forward_on<'t>(
        &self,
        _tape: &'t Tape,
        params: &Bound<'t>,
        sequences: &[[usize; SEQ_LEN]],
    ) -> Result<ForwardVars<'t>> {
        if sequences.is_empty() {
            return Err(Error::Contract("empty token batch".into()));
        }
        let vocab = self.vocab_size();
        let mut ids = Vec::with_capacity(sequences.len() * SEQ_LEN);
        for (i, seq) in sequences.iter().enumerate() {
            if seq[SEQ_LEN - 1] != self.blank_token() {
                return Err(Error::Contract(format!("sequence {i} does not end with the blank token")));
            }
            if let Some(&t) = seq.iter().find(|&&t| t >= vocab) {
                return Err(Error::Index(format!("token {t} outside vocabulary of {vocab}")));
            }
            ids.extend_from_slice(seq);
        }
        let batch = sequences.len();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..SEQ_LEN).collect();
        let last: Vec<usize> = (0..batch).map(|b| b * SEQ_LEN + SEQ_LEN - 1).collect();

        let norm = |x: crate::ndcore::Var<'t>, name: &str| -> Result<crate::ndcore::Var<'t>> {
            if self.use_norm {
                x.rms_norm(params.var(&format!("{name}.scale"))?)
            } else {
                Ok(x)
            }
        };

        let h0 = params
            .var("embed")?
            .gather_rows(&ids)?
            .add(params.var("pos")?.gather_rows(&positions)?)?;
        let a_in = norm(h0, "norm.attn_in")?;
        let keys = a_in.matmul(params.var("attn.k")?)?;
        let values = a_in.matmul(params.var("attn.v")?)?;
        // only the blank position is read out, so only its query is needed
        let queries = a_in.gather_rows(&last)?.matmul(params.var("attn.q")?)?;
        let heads_out = queries.attention(keys, values, self.num_heads, SEQ_LEN)?;
        let r1 = h0.gather_rows(&last)?.add(heads_out.matmul(params.var("attn.o")?)?)?;

        let pre = norm(r1, "norm.mlp_in")?.matmul(params.var("mlp.in")?)?;
        let hid = pre.relu();
        let r2 = r1.add(hid.matmul(params.var("mlp.out")?)?)?;
        let logits = norm(r2, "norm.mlp_out")?.matmul(params.var("head")?)?;
        Ok(ForwardVars {
            logits,
            hidden: vec![("mlp".to_string(), pre, hid)],
            attention: Some(heads_out),
        })
    }
}
