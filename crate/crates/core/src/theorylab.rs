//! Closed forms and Monte-Carlo estimates for how one noisy gradient step
//! rotates a layer's embedding and flips ReLU units, as a function of the
//! learning rate `η`, gradient scale `σ_g` and parameter scale `α`.
//!
//! The network is taken to be scale invariant, so at parameter scale `α`
//! the gradient shrinks by `1/α` and both quantities depend on
//! `ησ_g/α²` only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbModel {
    pub input_dim: usize,
    pub width: usize,
    pub sigma_g: f64,
    pub alpha: f64,
    pub lr: f64,
    pub samples: usize,
    pub seed: u64,
}

impl PerturbModel {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.samples == 0 {
            return Err(Error::Config("dimensions and sample count must be positive".into()));
        }
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be finite and nonzero, got {}", self.alpha)));
        }
        if !(self.sigma_g >= 0.0 && self.lr >= 0.0) {
            return Err(Error::Domain("sigma_g and lr must be non-negative".into()));
        }
        Ok(())
    }

    /// `ησ_g/α²`, the effective step that both formulas depend on.
    pub fn ratio(&self) -> f64 {
        self.lr * self.sigma_g / (self.alpha * self.alpha)
    }
}

/// Mean of a Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

fn ratio(lr: f64, sigma_g: f64, alpha: f64) -> Result<f64> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be finite and nonzero, got {alpha}")));
    }
    Ok(lr * sigma_g / (alpha * alpha))
}

/// `1/√(1 + (ησ_g/α²)²)`.
pub fn rotation_cosine_closed_form(lr: f64, sigma_g: f64, alpha: f64) -> Result<f64> {
    let r = ratio(lr, sigma_g, alpha)?;
    Ok(1.0 / (1.0 + r * r).sqrt())
}

/// `1/2 − arctan(α²/(ησ_g))/π`, only defined for `ησ_g/α² ≤ 1`.
pub fn flip_prob_closed_form(lr: f64, sigma_g: f64, alpha: f64) -> Result<f64> {
    let r = ratio(lr, sigma_g, alpha)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!(
            "flip-probability formula needs 0 <= ησ_g/α² <= 1, got {r}"
        )));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 - (1.0 / r).atan() / std::f64::consts::PI)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn summarize(sum: f64, sum_sq: f64, n: usize) -> Estimate {
    let n_f = n as f64;
    let mean = sum / n_f;
    let var = if n > 1 {
        ((sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        se: (var / n_f).sqrt(),
    }
}

/// Cosine between `Φ = W₁x` and `Φ' = (W₁ − η g̃)x`.
///
/// `W₁` has `N(0, α²/m)` entries and the scale-invariant gradient `g̃ = g/α`
/// has `N(0, σ_g²/(dα²))` entries. For a unit `x` the rows of `W₁x` and
/// `g̃x` are again independent Gaussians with those variances, so each
/// sample draws the two `d`-vectors directly.
pub fn rotation_cosine_mc(model: &PerturbModel) -> Result<Estimate> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let (m, d) = (model.input_dim as f64, model.width as f64);
    let phi_std = model.alpha.abs() / m.sqrt();
    let step_std = model.lr * model.sigma_g / (model.alpha.abs() * d.sqrt());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..model.samples {
        let (mut dot, mut nn, mut pp) = (0.0, 0.0, 0.0);
        for _ in 0..model.width {
            let phi = phi_std * normal(&mut rng);
            let moved = phi - step_std * normal(&mut rng);
            dot += phi * moved;
            nn += phi * phi;
            pp += moved * moved;
        }
        let c = if pp == nn && dot == nn { 1.0 } else { dot / (nn.sqrt() * pp.sqrt()) };
        sum += c;
        sum_sq += c * c;
    }
    Ok(summarize(sum, sum_sq, model.samples))
}

/// Fraction of active units (`Φ > 0`) that turn off after the step,
/// with `Φ ~ N(0, α²)` and the step `z ~ N(0, η²σ_g²/α²)`.
pub fn flip_prob_mc(model: &PerturbModel) -> Result<Estimate> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let step_std = model.lr * model.sigma_g / model.alpha.abs();
    let (mut active, mut flips) = (0usize, 0usize);
    for _ in 0..model.samples {
        let phi = model.alpha.abs() * normal(&mut rng);
        let z = step_std * normal(&mut rng);
        if phi > 0.0 {
            active += 1;
            if phi - z < 0.0 {
                flips += 1;
            }
        }
    }
    if active == 0 {
        return Ok(Estimate { mean: 0.0, se: 0.0 });
    }
    let p = flips as f64 / active as f64;
    Ok(Estimate {
        mean: p,
        se: (p * (1.0 - p) / active as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryGrid {
    pub lrs: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_dim")]
    pub input_dim: usize,
    #[serde(default = "default_dim")]
    pub width: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Relative tolerance floor next to the 3-SE band.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_dim() -> usize {
    512
}

fn default_samples() -> usize {
    100_000
}

fn default_rel_tol() -> f64 {
    0.01
}

impl Default for TheoryGrid {
    fn default() -> Self {
        Self {
            lrs: vec![0.1, 0.3, 1.0],
            sigmas: vec![0.25, 0.5, 1.0],
            alphas: vec![1.0, 2.0],
            input_dim: default_dim(),
            width: default_dim(),
            samples: default_samples(),
            seed: 0,
            rel_tol: default_rel_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    RotationCosine,
    FlipProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub quantity: Quantity,
    pub lr: f64,
    pub sigma_g: f64,
    pub alpha: f64,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub pass: bool,
}

/// `|mc − closed| ≤ max(3·SE, rel_tol·closed)`.
pub fn agrees(closed: f64, est: Estimate, rel_tol: f64) -> bool {
    (est.mean - closed).abs() <= (3.0 * est.se).max(rel_tol * closed.abs())
}

/// Evaluates both quantities at every grid point. Each point gets its own
/// seed derived from the grid seed and its position.
pub fn validate_grid(grid: &TheoryGrid) -> Result<Vec<GridRow>> {
    let mut rows = Vec::new();
    let mut index = 0u64;
    for &lr in &grid.lrs {
        for &sigma_g in &grid.sigmas {
            for &alpha in &grid.alphas {
                let model = PerturbModel {
                    input_dim: grid.input_dim,
                    width: grid.width,
                    sigma_g,
                    alpha,
                    lr,
                    samples: grid.samples,
                    seed: grid.seed.wrapping_mul(1_000_003).wrapping_add(index),
                };
                index += 1;
                let closed = rotation_cosine_closed_form(lr, sigma_g, alpha)?;
                let est = rotation_cosine_mc(&model)?;
                rows.push(GridRow {
                    quantity: Quantity::RotationCosine,
                    lr,
                    sigma_g,
                    alpha,
                    closed_form: closed,
                    mc_mean: est.mean,
                    mc_se: est.se,
                    pass: agrees(closed, est, grid.rel_tol),
                });
                let closed = flip_prob_closed_form(lr, sigma_g, alpha)?;
                let est = flip_prob_mc(&model)?;
                rows.push(GridRow {
                    quantity: Quantity::FlipProbability,
                    lr,
                    sigma_g,
                    alpha,
                    closed_form: closed,
                    mc_mean: est.mean,
                    mc_se: est.se,
                    pass: agrees(closed, est, grid.rel_tol),
                });
            }
        }
    }
    Ok(rows)
}
