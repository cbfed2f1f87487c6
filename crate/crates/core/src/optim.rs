//! Parameter updates: SGD and Adam with decoupled decay, per-tensor
//! Frobenius-norm projection, and effective-learning-rate accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ParamGrads, Parameters, Role};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Step counter, moment buffers and the current learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lr: f64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        let mut s = Self {
            step: 0,
            kind,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            lr: 0.0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        };
        s.set_lr(lr)?;
        Ok(s)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// A rate of exactly zero is accepted so frozen runs can be expressed.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be finite and non-negative, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecayConfig {
    /// Applied to weight, head and embedding tensors.
    pub weight_decay: f64,
    /// Applied to normalization scales only.
    pub scale_decay: f64,
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weight_decay < 0.0 || self.scale_decay < 0.0 {
            return Err(Error::Config("decay coefficients must be non-negative".into()));
        }
        Ok(())
    }

    fn coefficient(&self, role: Role) -> f64 {
        match role {
            Role::Weight | Role::Head | Role::Embedding => self.weight_decay,
            Role::NormScale => self.scale_decay,
            Role::Bias => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Project after every `interval`-th optimizer step.
    pub interval: u64,
    pub roles: Vec<Role>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            interval: 1,
            roles: vec![Role::Weight],
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::Config("projection interval must be at least 1".into()));
        }
        Ok(())
    }

    pub fn due(&self, step: u64) -> bool {
        step % self.interval == 0
    }
}

/// Per-tensor Frobenius norm of the applied update.
pub type UpdateNorms = BTreeMap<String, f64>;

fn check_grads(params: &Parameters, grads: &ParamGrads) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.tensor.shape() => {}
            Some(g) => {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.tensor.shape()
                )))
            }
            None => return Err(Error::Shape(format!("missing gradient for `{name}`"))),
        }
    }
    Ok(())
}

fn multiplier(multipliers: Option<&BTreeMap<String, f64>>, name: &str) -> f64 {
    multipliers.and_then(|m| m.get(name)).copied().unwrap_or(1.0)
}

/// `θ ← θ − η·m·(g + λ·θ)` with `λ` chosen by role and `m` the per-layer multiplier.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    decay: &DecayConfig,
    multipliers: Option<&BTreeMap<String, f64>>,
) -> Result<UpdateNorms> {
    check_grads(params, grads)?;
    let lr = state.lr;
    let mut norms = UpdateNorms::new();
    for (name, p) in params.iter_mut() {
        let step = lr * multiplier(multipliers, name);
        let lambda = decay.coefficient(p.role);
        let g = &grads[name];
        let mut sq = 0.0;
        for (w, gv) in p.tensor.data_mut().iter_mut().zip(g.data()) {
            let delta = step * (gv + lambda * *w);
            *w -= delta;
            sq += delta * delta;
        }
        norms.insert(name.to_string(), sq.sqrt());
    }
    state.step += 1;
    Ok(norms)
}

/// Adam with bias correction; decay is added after the adaptive rescale.
pub fn adam_step(
    params: &mut Parameters,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    decay: &DecayConfig,
    multipliers: Option<&BTreeMap<String, f64>>,
) -> Result<UpdateNorms> {
    check_grads(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut norms = UpdateNorms::new();
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let step = lr * multiplier(multipliers, name);
        let lambda = decay.coefficient(p.role);
        let mut sq = 0.0;
        for (((w, gv), mv), vv) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let adaptive = (*mv / c1) / ((*vv / c2).sqrt() + eps);
            let delta = step * (adaptive + lambda * *w);
            *w -= delta;
            sq += delta * delta;
        }
        norms.insert(name.to_string(), sq.sqrt());
    }
    Ok(norms)
}

/// Dispatches on `state.kind`.
pub fn optimizer_step(
    params: &mut Parameters,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    decay: &DecayConfig,
    multipliers: Option<&BTreeMap<String, f64>>,
) -> Result<UpdateNorms> {
    match state.kind {
        OptimizerKind::Sgd => sgd_step(params, grads, state, decay, multipliers),
        OptimizerKind::Adam => adam_step(params, grads, state, decay, multipliers),
    }
}

/// Rescales every tensor whose role is in `cfg.roles` back to its initial
/// Frobenius norm: `W ← W · ‖W₀‖ / ‖W‖`.
///
/// A projected tensor with zero norm is an error; it means the layer has
/// collapsed and there is no direction left to rescale.
pub fn project(params: &mut Parameters, cfg: &ProjectionConfig) -> Result<()> {
    let targets: Vec<(String, f64)> = params
        .iter()
        .filter(|(_, p)| cfg.roles.contains(&p.role))
        .map(|(n, _)| (n.to_string(), params.initial_norm(n).unwrap_or(0.0)))
        .collect();
    for (name, target) in targets {
        let t = params.tensor_mut(&name)?;
        let norm = t.frobenius_norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate {
                name,
                reason: format!("cannot project a tensor with norm {norm}"),
            });
        }
        let factor = target / norm;
        for v in t.data_mut() {
            *v *= factor;
        }
    }
    Ok(())
}

/// `η/‖θ‖²` for SGD, `η/‖θ‖` for Adam.
pub fn effective_lr(lr: f64, param_norm: f64, kind: OptimizerKind) -> Result<f64> {
    if !(param_norm > 0.0) {
        return Err(Error::Domain(format!("effective learning rate needs a positive norm, got {param_norm}")));
    }
    Ok(match kind {
        OptimizerKind::Sgd => lr / (param_norm * param_norm),
        OptimizerKind::Adam => lr / param_norm,
    })
}

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
}

/// `θᵀAθ / (2‖θ‖²)` for symmetric `A`: invariant to any nonzero rescaling
/// of `θ`, including sign flips.
#[derive(Debug, Clone)]
pub struct RayleighQuotient {
    matrix: Tensor,
}

impl RayleighQuotient {
    pub fn new(matrix: Tensor) -> Result<Self> {
        let (n, m) = (matrix.rows(), matrix.cols());
        if n != m || !matrix.is_matrix() {
            return Err(Error::Shape(format!("need a square matrix, got {:?}", matrix.shape())));
        }
        let t = matrix.transpose()?;
        let sym = matrix.add(&t)?.scale(0.5);
        Ok(Self { matrix: sym })
    }

    fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let n = theta.len();
        (0..n)
            .map(|i| self.matrix.row(i).iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Objective for RayleighQuotient {
    fn value(&self, theta: &[f64]) -> f64 {
        let at = self.apply(theta);
        let num: f64 = theta.iter().zip(&at).map(|(a, b)| a * b).sum();
        let den: f64 = theta.iter().map(|v| v * v).sum();
        0.5 * num / den
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let at = self.apply(theta);
        let sq: f64 = theta.iter().map(|v| v * v).sum();
        let f = self.value(theta);
        at.iter().zip(theta).map(|(a, t)| (a - 2.0 * f * t) / sq).collect()
    }
}

/// Runs gradient descent from `θ₀` with rate `η` and from `αθ₀` with rate
/// `α²η`, returning the largest per-step gap in function value.
///
/// For a scale-invariant objective the two trajectories stay related by
/// `θ'ₜ = αθₜ`, so the gap only reflects rounding.
pub fn elr_equivalence_trace(f: &dyn Objective, theta0: &[f64], lr: f64, alpha: f64, steps: usize) -> Result<f64> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::Domain(format!("scale factor must be finite and nonzero, got {alpha}")));
    }
    let mut a = theta0.to_vec();
    let mut b: Vec<f64> = theta0.iter().map(|v| alpha * v).collect();
    let (fa, fb) = (f.value(&a), f.value(&b));
    if (fa - fb).abs() > 1e-8 * fa.abs().max(1.0) {
        return Err(Error::Contract(format!(
            "objective is not scale invariant at θ₀: f(θ₀)={fa}, f(αθ₀)={fb}"
        )));
    }
    let lr_scaled = alpha * alpha * lr;
    let mut gap = (fa - fb).abs();
    for _ in 0..steps {
        let ga = f.gradient(&a);
        let gb = f.gradient(&b);
        for (w, g) in a.iter_mut().zip(&ga) {
            *w -= lr * g;
        }
        for (w, g) in b.iter_mut().zip(&gb) {
            *w -= lr_scaled * g;
        }
        gap = gap.max((f.value(&a) - f.value(&b)).abs());
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn single(value: f64, role: Role) -> Parameters {
        let mut p = Parameters::new();
        p.insert("w", Tensor::filled(&[1], value), role);
        p
    }

    fn grad(value: f64) -> ParamGrads {
        [("w".to_string(), Tensor::filled(&[1], value))].into()
    }

    #[test]
    fn sgd_examples() {
        let mut p = single(1.0, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        sgd_step(&mut p, &grad(0.5), &mut s, &DecayConfig::default(), None).unwrap();
        assert!((p.tensor("w").unwrap().data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.step, 1);

        let before = p.clone();
        sgd_step(&mut p, &grad(0.0), &mut s, &DecayConfig::default(), None).unwrap();
        assert_eq!(p, before);

        let mut p = single(2.0, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 1.0).unwrap();
        let decay = DecayConfig {
            weight_decay: 0.1,
            scale_decay: 0.0,
        };
        sgd_step(&mut p, &grad(0.0), &mut s, &decay, None).unwrap();
        assert!((p.tensor("w").unwrap().data()[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(1.0, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Adam, 0.1).unwrap();
        let bad: ParamGrads = [("w".to_string(), Tensor::zeros(&[2]))].into();
        assert!(matches!(
            adam_step(&mut p, &bad, &mut s, &DecayConfig::default(), None),
            Err(Error::Shape(_))
        ));
        assert!(sgd_step(&mut p, &ParamGrads::new(), &mut s, &DecayConfig::default(), None).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Parameters::new();
        p.insert("w", Tensor::filled(&[3], 0.7), Role::Weight);
        let g: ParamGrads = [("w".to_string(), Tensor::filled(&[3], 1.0))].into();
        let mut s = OptimizerState::new(OptimizerKind::Adam, 0.01).unwrap();
        let norms = adam_step(&mut p, &g, &mut s, &DecayConfig::default(), None).unwrap();
        for v in p.tensor("w").unwrap().data() {
            assert!((0.7 - v - 0.01).abs() < 1e-9);
        }
        assert!((norms["w"] - 0.01 * 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn adam_constant_gradient_reaches_steady_step() {
        let mut p = single(0.0, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Adam, 0.01).unwrap();
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p.tensor("w").unwrap().data()[0];
            adam_step(&mut p, &grad(-0.3), &mut s, &DecayConfig::default(), None).unwrap();
            last = p.tensor("w").unwrap().data()[0] - before;
            assert!(last > 0.0);
        }
        assert!((last - 0.01).abs() < 1e-8);
    }

    /// Adam written out step by step with no shared code.
    fn adam_oracle(grads: &[f64], lr: f64, theta0: f64) -> Vec<f64> {
        let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
        let mut out = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powf(t));
            let vhat = v / (1.0 - 0.999f64.powf(t));
            theta -= lr * mhat / (vhat.sqrt() + 1e-8);
            out.push(theta);
        }
        out
    }

    #[test]
    fn adam_two_step_hand_trace() {
        // step 1: m=0.1, v=0.001, mhat=1, vhat=1 => theta = -0.1 (lr 0.1)
        // step 2: m=0.09-0.1=-0.01, v=0.000999+0.001=0.001999
        //         mhat=-0.01/0.19, vhat=0.001999/0.001999=1 => update = +0.1*0.0526315...
        let oracle = adam_oracle(&[1.0, -1.0], 0.1, 0.0);
        let mhat2 = -0.01 / 0.19;
        let expected2 = -0.1 / (1.0 + 1e-8) - 0.1 * mhat2 / (1.0 + 1e-8);
        assert!((oracle[1] - expected2).abs() < 1e-12);

        let mut p = single(0.0, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Adam, 0.1).unwrap();
        for (g, want) in [1.0, -1.0].iter().zip(&oracle) {
            adam_step(&mut p, &grad(*g), &mut s, &DecayConfig::default(), None).unwrap();
            assert!((p.tensor("w").unwrap().data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_ten_step_scalar_trace() {
        let grads = [0.3, -1.2, 0.8, 0.05, -0.4, 2.0, -0.7, 0.1, 0.9, -1.5];
        let oracle = adam_oracle(&grads, 0.05, 0.4);
        let mut p = single(0.4, Role::Weight);
        let mut s = OptimizerState::new(OptimizerKind::Adam, 0.05).unwrap();
        for (g, want) in grads.iter().zip(&oracle) {
            adam_step(&mut p, &grad(*g), &mut s, &DecayConfig::default(), None).unwrap();
            assert!((p.tensor("w").unwrap().data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_decay_is_geometric() {
        let mut p = Parameters::new();
        p.insert("s", Tensor::filled(&[4], 1.5), Role::NormScale);
        p.insert("w", Tensor::filled(&[4], 1.5), Role::Weight);
        let g: ParamGrads = [("s".to_string(), Tensor::zeros(&[4])), ("w".to_string(), Tensor::zeros(&[4]))].into();
        let decay = DecayConfig {
            weight_decay: 0.0,
            scale_decay: 0.2,
        };
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut q = p.clone();
            let mut s = OptimizerState::new(kind, 0.05).unwrap();
            for step in 1..=20 {
                optimizer_step(&mut q, &g, &mut s, &decay, None).unwrap();
                let want = 1.5 * (1.0 - 0.05 * 0.2f64).powi(step);
                assert!((q.tensor("s").unwrap().data()[0] - want).abs() < 1e-12);
                assert_eq!(q.tensor("w").unwrap().data()[0], 1.5);
            }
        }
    }

    #[test]
    fn multipliers_scale_the_step() {
        let mut p = single(1.0, Role::Head);
        let mut s = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let m: BTreeMap<String, f64> = [("w".to_string(), 0.1)].into();
        sgd_step(&mut p, &grad(1.0), &mut s, &DecayConfig::default(), Some(&m)).unwrap();
        assert!((p.tensor("w").unwrap().data()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let mut p = Parameters::new();
        p.insert("w", Tensor::new(&[2], vec![0.6, 0.8]).unwrap(), Role::Weight);
        p.insert("s", Tensor::new(&[2], vec![3.0, 4.0]).unwrap(), Role::NormScale);
        *p.tensor_mut("w").unwrap() = Tensor::new(&[2], vec![1.2, 1.6]).unwrap();
        *p.tensor_mut("s").unwrap() = Tensor::new(&[2], vec![6.0, 8.0]).unwrap();
        let before = p.clone();
        project(&mut p, &ProjectionConfig::default()).unwrap();
        let w = p.tensor("w").unwrap().data();
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        assert_eq!(p.tensor("s").unwrap(), before.tensor("s").unwrap());

        let again = p.clone();
        project(&mut p, &ProjectionConfig::default()).unwrap();
        assert!(p.tensor("w").unwrap().max_abs_diff(again.tensor("w").unwrap()).unwrap() <= 1e-15);

        *p.tensor_mut("w").unwrap() = Tensor::zeros(&[2]);
        assert!(matches!(
            project(&mut p, &ProjectionConfig::default()),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn effective_lr_examples() {
        assert!((effective_lr(0.1, 2.0, OptimizerKind::Sgd).unwrap() - 0.025).abs() < 1e-15);
        assert!((effective_lr(0.1, 2.0, OptimizerKind::Adam).unwrap() - 0.05).abs() < 1e-15);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            assert_eq!(effective_lr(0.3, 1.0, kind).unwrap(), 0.3);
        }
        assert!(effective_lr(0.1, 0.0, OptimizerKind::Sgd).is_err());
    }

    fn rayleigh(seed: u64, n: usize) -> (RayleighQuotient, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::new(&[n, n], (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (RayleighQuotient::new(a).unwrap(), theta)
    }

    #[test]
    fn rayleigh_gradient_matches_central_differences() {
        let (f, theta) = rayleigh(1, 6);
        let g = f.gradient(&theta);
        for i in 0..6 {
            let mut p = theta.clone();
            p[i] += 1e-6;
            let up = f.value(&p);
            p[i] -= 2e-6;
            let down = f.value(&p);
            assert!(((up - down) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn elr_equivalence_examples() {
        let (f, theta) = rayleigh(2, 8);
        assert_eq!(elr_equivalence_trace(&f, &theta, 0.1, 1.0, 50).unwrap(), 0.0);
        for alpha in [2.0, -1.0, 10.0] {
            let gap = elr_equivalence_trace(&f, &theta, 0.1, alpha, 50).unwrap();
            assert!(gap <= 1e-8, "alpha={alpha}: {gap}");
        }
        assert!(elr_equivalence_trace(&f, &theta, 0.1, 0.0, 5).is_err());
    }

    struct NotInvariant;
    impl Objective for NotInvariant {
        fn value(&self, t: &[f64]) -> f64 {
            t.iter().map(|v| v * v).sum()
        }
        fn gradient(&self, t: &[f64]) -> Vec<f64> {
            t.iter().map(|v| 2.0 * v).collect()
        }
    }

    #[test]
    fn elr_equivalence_rejects_non_invariant_objective() {
        assert!(matches!(
            elr_equivalence_trace(&NotInvariant, &[1.0, 2.0], 0.1, 2.0, 5),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn projection_restores_initial_norm(
            init in prop::collection::vec(-2.0f64..2.0, 12),
            grads in prop::collection::vec(-5.0f64..5.0, 12),
            lr in 1e-4f64..0.5,
            adam in any::<bool>(),
        ) {
            let init_t = Tensor::new(&[3, 4], init).unwrap();
            prop_assume!(init_t.frobenius_norm() > 1e-3);
            let mut p = Parameters::new();
            p.insert("w", init_t.clone(), Role::Weight);
            let kind = if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd };
            let mut s = OptimizerState::new(kind, lr).unwrap();
            let g: ParamGrads = [("w".to_string(), Tensor::new(&[3, 4], grads).unwrap())].into();
            for _ in 0..3 {
                optimizer_step(&mut p, &g, &mut s, &DecayConfig { weight_decay: 0.01, scale_decay: 0.0 }, None).unwrap();
                project(&mut p, &ProjectionConfig::default()).unwrap();
                let norm = p.tensor("w").unwrap().frobenius_norm();
                prop_assert!((norm - init_t.frobenius_norm()).abs() <= 1e-10);
            }
        }
    }
}
