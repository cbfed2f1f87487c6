use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over compared coordinates of `|a - n| / max(|a| + |n|, SCALE_FLOOR)`.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Coordinates whose `±10 eps` probe moved some ReLU input across zero.
    pub excluded: usize,
}

/// Below this magnitude a central difference with a 1e-5 step is mostly
/// rounding noise, so the error is measured against the floor instead.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Checks `backward` against central differences for every coordinate of
/// every tensor in `params`.
///
/// `build` records the loss on the supplied tape from one leaf per tensor.
/// A coordinate is skipped when a probe `10 * eps` to either side flips the sign pattern of any
/// ReLU input relative to the unperturbed pass, i.e. the probe straddles a
/// kink.
pub fn finite_diff_check<F>(params: &[Tensor], eps: f64, build: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|v| grads.get_or_zeros(*v)).collect();
    let base_pattern = tape.relu_patterns();

    let eval = |probe: &[Tensor]| -> Result<(f64, Vec<Vec<bool>>)> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = probe.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = build(&tape, &leaves)?;
        let value = loss.value().data()[0];
        Ok((value, tape.relu_patterns()))
    };

    let mut probe = params.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
    };
    for t in 0..params.len() {
        for i in 0..params[t].len() {
            let orig = params[t].data()[i];
            let mut near_kink = false;
            for off in [10.0 * eps, -10.0 * eps] {
                probe[t].data_mut()[i] = orig + off;
                near_kink |= eval(&probe)?.1 != base_pattern;
            }
            probe[t].data_mut()[i] = orig + eps;
            let (plus, _) = eval(&probe)?;
            probe[t].data_mut()[i] = orig - eps;
            let (minus, _) = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            if near_kink {
                out.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[t].data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(SCALE_FLOOR);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.compared += 1;
        }
    }
    Ok(out)
}
