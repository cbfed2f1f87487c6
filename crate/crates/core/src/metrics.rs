//! Feature-learning measurements: normalized feature-covariance change,
//! activation-pattern change, dead units and effective rank.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Features of one layer on a fixed probe set at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSnapshot {
    pub layer: String,
    pub step: u64,
    pub features: Tensor,
    /// Row-major `n×d`; true where the preactivation was positive.
    pub pattern: Vec<bool>,
}

impl FeatureSnapshot {
    /// Snapshot of a ReLU layer from its preactivations.
    pub fn from_preactivations(layer: impl Into<String>, step: u64, pre: &Tensor) -> Result<Self> {
        if !pre.is_matrix() {
            return Err(Error::Shape(format!("features must be a matrix, got {:?}", pre.shape())));
        }
        Ok(Self {
            layer: layer.into(),
            step,
            features: pre.map(|v| v.max(0.0)),
            pattern: pre.data().iter().map(|&v| v > 0.0).collect(),
        })
    }

    /// Snapshot of arbitrary (not necessarily rectified) features; the
    /// pattern marks positive entries.
    pub fn from_features(layer: impl Into<String>, step: u64, features: Tensor) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::Shape(format!("features must be a matrix, got {:?}", features.shape())));
        }
        let pattern = features.data().iter().map(|&v| v > 0.0).collect();
        Ok(Self {
            layer: layer.into(),
            step,
            features,
            pattern,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }
}

/// `f fᵀ / ‖f‖²_F` over the feature rows; its trace is 1.
pub fn feature_cov(snapshot: &FeatureSnapshot) -> Result<Tensor> {
    let f = &snapshot.features;
    let sq: f64 = f.data().iter().map(|v| v * v).sum();
    if !(sq > 0.0) {
        return Err(Error::Degenerate {
            name: snapshot.layer.clone(),
            reason: "all features are zero, covariance is undefined".into(),
        });
    }
    Ok(f.gram()?.scale(1.0 / sq))
}

fn check_pair(a: &FeatureSnapshot, b: &FeatureSnapshot) -> Result<()> {
    if a.features.shape() != b.features.shape() {
        return Err(Error::Shape(format!(
            "snapshots of `{}` differ in shape: {:?} vs {:?}",
            a.layer,
            a.features.shape(),
            b.features.shape()
        )));
    }
    Ok(())
}

/// Frobenius distance between the two normalized covariance matrices.
pub fn delta_c(a: &FeatureSnapshot, b: &FeatureSnapshot) -> Result<f64> {
    check_pair(a, b)?;
    Ok(feature_cov(a)?.sub(&feature_cov(b)?)?.frobenius_norm())
}

/// Fraction of entries whose activation indicator differs.
pub fn delta_a(a: &FeatureSnapshot, b: &FeatureSnapshot) -> Result<f64> {
    check_pair(a, b)?;
    if a.pattern.is_empty() {
        return Ok(0.0);
    }
    let diff = a.pattern.iter().zip(&b.pattern).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.pattern.len() as f64)
}

/// Units that are inactive on every probe input.
pub fn dead_units(snapshot: &FeatureSnapshot) -> usize {
    let (n, d) = (snapshot.rows(), snapshot.cols());
    (0..d)
        .filter(|&j| (0..n).all(|i| !snapshot.pattern[i * d + j]))
        .count()
}

/// `exp(−Σ pᵢ ln pᵢ)` with `pᵢ = σᵢ / Σσ` over the singular values.
pub fn effective_rank(m: &Tensor) -> Result<f64> {
    if !m.is_matrix() {
        return Err(Error::Shape(format!("effective rank needs a matrix, got {:?}", m.shape())));
    }
    let mat = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let sv = mat.singular_values();
    let total: f64 = sv.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate {
            name: "matrix".into(),
            reason: "effective rank of a zero matrix is undefined".into(),
        });
    }
    let entropy: f64 = sv
        .iter()
        .map(|s| s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy.exp())
}

/// One logged row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub elr: BTreeMap<String, f64>,
    pub param_norm: BTreeMap<String, f64>,
    pub update_norm: BTreeMap<String, f64>,
    pub delta_c: BTreeMap<String, f64>,
    pub delta_a: BTreeMap<String, f64>,
    pub dead_units: usize,
    pub attention_rank: Option<f64>,
    /// True on the step where the schedule was reset.
    #[serde(default)]
    pub rewarm: bool,
}

impl MetricRecord {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.train_acc) || !unit(self.test_acc) {
            return Err(Error::Contract(format!("accuracy outside [0, 1] at step {}", self.step)));
        }
        if self.delta_a.values().any(|&v| !unit(v)) {
            return Err(Error::Contract(format!("activation change outside [0, 1] at step {}", self.step)));
        }
        let nonneg = |m: &BTreeMap<String, f64>| m.values().all(|&v| v >= 0.0);
        if !nonneg(&self.param_norm) || !nonneg(&self.update_norm) || !nonneg(&self.delta_c) {
            return Err(Error::Contract(format!("negative norm at step {}", self.step)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn snap(rows: &[Vec<f64>]) -> FeatureSnapshot {
        FeatureSnapshot::from_features("l", 0, Tensor::from_rows(rows).unwrap()).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn brute_cov(f: &Tensor) -> Vec<Vec<f64>> {
        let (n, d) = (f.rows(), f.cols());
        let mut total = 0.0;
        for v in f.data() {
            total += v * v;
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += f.get(i, k) * f.get(j, k);
                }
                out[i][j] = s / total;
            }
        }
        out
    }

    #[test]
    fn covariance_examples() {
        let c = feature_cov(&snap(&[vec![1.0, 0.0]])).unwrap();
        assert_eq!(c.data(), &[1.0]);
        let c = feature_cov(&snap(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(c.data(), &[0.5, 0.0, 0.0, 0.5]);
        assert!(feature_cov(&snap(&[vec![0.0, 0.0]])).is_err());
    }

    #[test]
    fn covariance_matches_brute_force() {
        for seed in 0..100 {
            let f = random(5, 3, seed);
            let c = feature_cov(&FeatureSnapshot::from_features("l", 0, f.clone()).unwrap()).unwrap();
            let oracle = brute_cov(&f);
            let mut trace = 0.0;
            for i in 0..5 {
                trace += c.get(i, i);
                for j in 0..5 {
                    assert!((c.get(i, j) - oracle[i][j]).abs() <= 1e-12);
                }
            }
            assert!((trace - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_c_invariances() {
        let f = random(6, 4, 3);
        let a = FeatureSnapshot::from_features("l", 0, f.clone()).unwrap();
        assert_eq!(delta_c(&a, &a).unwrap(), 0.0);
        let scaled = FeatureSnapshot::from_features("l", 1, f.scale(7.5)).unwrap();
        assert!(delta_c(&a, &scaled).unwrap() < 1e-12);
        // rotation of columns 0 and 1 by 0.7 rad
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let mut r = Tensor::identity(4);
        r.data_mut()[0] = c;
        r.data_mut()[1] = -s;
        r.data_mut()[4] = s;
        r.data_mut()[5] = c;
        let rotated = FeatureSnapshot::from_features("l", 1, f.matmul(&r).unwrap()).unwrap();
        assert!(delta_c(&a, &rotated).unwrap() < 1e-12);
        let other = FeatureSnapshot::from_features("l", 1, random(6, 4, 4)).unwrap();
        let d = delta_c(&a, &other).unwrap();
        assert!(d > 0.0);
        assert_eq!(d, delta_c(&other, &a).unwrap());
        let wrong = FeatureSnapshot::from_features("l", 1, random(5, 4, 4)).unwrap();
        assert!(matches!(delta_c(&a, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_a_examples() {
        let a = snap(&[vec![1.0, -1.0], vec![2.0, 0.0]]);
        assert_eq!(delta_a(&a, &a).unwrap(), 0.0);
        let flipped = snap(&[vec![-1.0, 1.0], vec![-2.0, 3.0]]);
        assert_eq!(delta_a(&a, &flipped).unwrap(), 1.0);
        let one = snap(&[vec![1.0, -1.0], vec![2.0, 5.0]]);
        assert_eq!(delta_a(&a, &one).unwrap(), 0.25);
    }

    #[test]
    fn preactivation_snapshot_pattern() {
        let pre = Tensor::from_rows(&[vec![0.5, -0.1, 0.0]]).unwrap();
        let s = FeatureSnapshot::from_preactivations("l", 3, &pre).unwrap();
        assert_eq!(s.pattern, vec![true, false, false]);
        assert_eq!(s.features.data(), &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn dead_unit_examples() {
        assert_eq!(dead_units(&snap(&[vec![1.0, 2.0], vec![3.0, 4.0]])), 0);
        assert_eq!(dead_units(&snap(&[vec![1.0, -2.0], vec![3.0, -4.0]])), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pre = Tensor::new(&[10, 8], (0..80).map(|_| rng.gen_range(-1.0..0.3)).collect()).unwrap();
            let s = FeatureSnapshot::from_preactivations("l", 0, &pre).unwrap();
            let mut oracle = 0;
            for j in 0..8 {
                let mut alive = false;
                for i in 0..10 {
                    if pre.get(i, j) > 0.0 {
                        alive = true;
                    }
                }
                if !alive {
                    oracle += 1;
                }
            }
            assert_eq!(dead_units(&s), oracle);
        }
    }

    #[test]
    fn effective_rank_examples() {
        let r1 = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, -2.0]]).unwrap();
        assert!((effective_rank(&r1).unwrap() - 1.0).abs() < 1e-12);
        assert!((effective_rank(&Tensor::identity(4)).unwrap() - 4.0).abs() < 1e-12);
        let d = Tensor::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let p: [f64; 3] = [0.5, 0.25, 0.25];
        let oracle = (-p.iter().map(|v| v * v.ln()).sum::<f64>()).exp();
        assert!((oracle - 2.8284).abs() < 1e-4);
        assert!((effective_rank(&d).unwrap() - oracle).abs() < 1e-12);
        assert!(effective_rank(&Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn record_validation() {
        let mut r = MetricRecord::default();
        r.validate().unwrap();
        r.test_acc = 1.5;
        assert!(r.validate().is_err());
    }

    fn pattern_snap(bits: &[bool], d: usize) -> FeatureSnapshot {
        let n = bits.len() / d;
        let data = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        FeatureSnapshot::from_features("l", 0, Tensor::new(&[n, d], data).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn delta_a_is_a_metric(
            a in prop::collection::vec(any::<bool>(), 24),
            b in prop::collection::vec(any::<bool>(), 24),
            c in prop::collection::vec(any::<bool>(), 24),
        ) {
            let (a, b, c) = (pattern_snap(&a, 4), pattern_snap(&b, 4), pattern_snap(&c, 4));
            let ab = delta_a(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, delta_a(&b, &a).unwrap());
            prop_assert!(ab <= delta_a(&a, &c).unwrap() + delta_a(&c, &b).unwrap() + 1e-15);
        }

        #[test]
        fn effective_rank_bounds_and_invariance(
            data in prop::collection::vec(-1.0f64..1.0, 15),
            scale in 0.01f64..100.0,
            angle in 0.0..std::f64::consts::TAU,
        ) {
            let m = Tensor::new(&[5, 3], data).unwrap();
            prop_assume!(m.frobenius_norm() > 1e-3);
            let r = effective_rank(&m).unwrap();
            prop_assert!(r >= 1.0 - 1e-9 && r <= 3.0 + 1e-9);
            prop_assert!((effective_rank(&m.scale(scale)).unwrap() - r).abs() < 1e-9);
            let (c, s) = (angle.cos(), angle.sin());
            let rot = Tensor::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
            prop_assert!((effective_rank(&m.matmul(&rot).unwrap()).unwrap() - r).abs() < 1e-9);
        }

        #[test]
        fn delta_c_is_symmetric_and_scale_free(
            a in prop::collection::vec(-1.0f64..1.0, 12),
            b in prop::collection::vec(-1.0f64..1.0, 12),
            s in 0.1f64..10.0,
        ) {
            let ta = Tensor::new(&[4, 3], a).unwrap();
            let tb = Tensor::new(&[4, 3], b).unwrap();
            prop_assume!(ta.frobenius_norm() > 1e-3 && tb.frobenius_norm() > 1e-3);
            let sa = FeatureSnapshot::from_features("l", 0, ta.clone()).unwrap();
            let sb = FeatureSnapshot::from_features("l", 0, tb).unwrap();
            let sa2 = FeatureSnapshot::from_features("l", 0, ta.scale(s)).unwrap();
            let d = delta_c(&sa, &sb).unwrap();
            prop_assert!((d - delta_c(&sb, &sa).unwrap()).abs() < 1e-15);
            prop_assert!((d - delta_c(&sa2, &sb).unwrap()).abs() < 1e-12);
        }
    }
}
