//! Datasets: modular addition, the two-phase warm-start stream, Gaussian
//! cluster classification and CIFAR-10 binary batches.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Inputs, SEQ_LEN};
use crate::ndcore::Tensor;

/// Inputs with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Inputs, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, index: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(index),
            labels: index.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// How the train/test split treats `(x, y)` versus `(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Split unordered pairs `{x, y}`; both orderings land on the same side.
    #[default]
    Unordered,
    /// Split ordered pairs independently, so a test pair's mirror may be
    /// in the training set.
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModArithSpec {
    pub modulus: usize,
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub split: SplitMode,
}

impl ModArithSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(Error::Config(format!("modulus must be at least 2, got {}", self.modulus)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
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

    pub fn sequence(&self, x: usize, y: usize) -> [usize; SEQ_LEN] {
        [x, self.op_token(), y, self.eq_token(), self.blank_token()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub unordered_pair_count: usize,
    /// Number of sampled units (unordered or ordered pairs) in train.
    pub train_units: usize,
}

/// Every pair `x + y mod p`, split into train and test.
pub fn gen_modular_dataset(spec: &ModArithSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let p = spec.modulus;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut units: Vec<Vec<(usize, usize)>> = match spec.split {
        SplitMode::Unordered => (0..p)
            .flat_map(|x| (x..p).map(move |y| if x == y { vec![(x, x)] } else { vec![(x, y), (y, x)] }))
            .collect(),
        SplitMode::Ordered => (0..p).flat_map(|x| (0..p).map(move |y| vec![(x, y)])).collect(),
    };
    units.shuffle(&mut rng);
    let n_train = (spec.train_fraction * units.len() as f64).floor() as usize;
    let build = |units: &[Vec<(usize, usize)>]| -> Dataset {
        let pairs: Vec<(usize, usize)> = units.iter().flatten().copied().collect();
        Dataset {
            inputs: Inputs::Tokens(pairs.iter().map(|&(x, y)| spec.sequence(x, y)).collect()),
            labels: pairs.iter().map(|&(x, y)| (x + y) % p).collect(),
        }
    };
    Ok(DatasetSplit {
        train: build(&units[..n_train]),
        test: build(&units[n_train..]),
        unordered_pair_count: p * (p + 1) / 2,
        train_units: n_train,
    })
}

/// Test accuracy of a model that memorizes the training set and answers a
/// test query `(x, y)` with the label of `(y, x)` when that pair was seen,
/// otherwise with a uniformly random class.
pub fn mirror_oracle_accuracy(split: &DatasetSplit, modulus: usize, seed: u64) -> Result<f64> {
    let (Inputs::Tokens(train), Inputs::Tokens(test)) = (&split.train.inputs, &split.test.inputs) else {
        return Err(Error::Contract("mirror oracle needs token datasets".into()));
    };
    let memory: HashMap<(usize, usize), usize> = train
        .iter()
        .zip(&split.train.labels)
        .map(|(s, &l)| ((s[0], s[2]), l))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<usize> = (0..modulus).collect();
    let correct = test
        .iter()
        .zip(&split.test.labels)
        .filter(|(s, &l)| {
            let guess = memory
                .get(&(s[2], s[0]))
                .copied()
                .unwrap_or_else(|| *classes.choose(&mut rng).expect("modulus >= 2"));
            guess == l
        })
        .count();
    Ok(correct as f64 / test.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartSpec {
    pub initial_fraction: f64,
    #[serde(default = "default_phase_epochs")]
    pub phase_epochs: usize,
    pub seed: u64,
}

fn default_phase_epochs() -> usize {
    70
}

impl WarmStartSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "initial fraction must lie in (0, 1], got {}",
                self.initial_fraction
            )));
        }
        if self.phase_epochs == 0 {
            return Err(Error::Config("phase_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One phase of the stream: indices into the full training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub indices: Vec<usize>,
    pub epochs: usize,
}

/// Phase 1 trains on a random `initial_fraction` of the data, phase 2 on
/// all of it.
pub fn warm_start_stream(spec: &WarmStartSpec, dataset_len: usize) -> Result<[Phase; 2]> {
    spec.validate()?;
    if dataset_len == 0 {
        return Err(Error::Contract("warm-start stream over an empty dataset".into()));
    }
    let all: Vec<usize> = (0..dataset_len).collect();
    let k = ((spec.initial_fraction * dataset_len as f64).round() as usize).clamp(1, dataset_len);
    let mut first = if k == dataset_len {
        all.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut rng);
        shuffled.truncate(k);
        shuffled
    };
    first.sort_unstable();
    Ok([
        Phase {
            indices: first,
            epochs: spec.phase_epochs,
        },
        Phase {
            indices: all,
            epochs: spec.phase_epochs,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Standard deviation of the isotropic noise around each class mean.
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.samples_per_class == 0 {
            return Err(Error::Config("synthetic task needs at least 2 classes and 1 sample each".into()));
        }
        if self.dim < self.num_classes {
            return Err(Error::Config(format!(
                "dim {} cannot hold {} simplex vertices",
                self.dim, self.num_classes
            )));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::Config(format!("spread must be non-negative, got {}", self.spread)));
        }
        Ok(())
    }

    /// Class `c` is centred on the `c`-th basis vector.
    pub fn class_mean(&self, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[c] = 1.0;
        m
    }

    /// Accuracy of the Bayes (nearest-mean) rule by quadrature:
    /// `∫ φ(z) Φ(z + 1/σ)^{K−1} dz`.
    pub fn bayes_accuracy(&self) -> f64 {
        if self.spread == 0.0 {
            return 1.0;
        }
        // correct iff 1 + σ z_c > σ z_j for all j ≠ c
        let shift = 1.0 / self.spread;
        let k = (self.num_classes - 1) as i32;
        let (lo, hi, n) = (-10.0f64, 10.0, 20_000usize);
        let h = (hi - lo) / n as f64;
        let f = |z: f64| normal_pdf(z) * normal_cdf(z + shift).powi(k);
        // Simpson's rule
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        s * h / 3.0
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function, Numerical Recipes Chebyshev fit
/// (relative error below 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Gaussian clusters around the simplex vertices, classes interleaved.
pub fn gen_synthetic_classification(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..spec.samples_per_class {
        for c in 0..spec.num_classes {
            for m in spec.class_mean(c) {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spec.spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Inputs::Dense(Tensor::new(&[n, spec.dim], data)?), labels)
}

/// Label byte plus 3072 pixel bytes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    /// 1024 red, then 1024 green, then 1024 blue bytes, each row-major 32×32.
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cifar10Source {
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_records_per_file")]
    pub records_per_file: usize,
}

fn default_records_per_file() -> usize {
    10_000
}

/// Reads one batch file, checking its length and every label.
pub fn read_cifar_batch(path: &Path, records_per_file: usize) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = records_per_file * CIFAR_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            if rec[0] > 9 {
                return Err(Error::CorruptRecord {
                    path: path.to_path_buf(),
                    index,
                    reason: format!("label {} outside 0..=9", rec[0]),
                });
            }
            Ok(CifarRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

/// Writes records in the binary batch layout.
pub fn write_cifar_batch(path: &Path, records: &[CifarRecord]) -> Result<()> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for (i, r) in records.iter().enumerate() {
        if r.pixels.len() != CIFAR_PIXELS {
            return Err(Error::Shape(format!(
                "record {i} has {} pixel bytes, expected {CIFAR_PIXELS}",
                r.pixels.len()
            )));
        }
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// All batches as `[N, 3072]` pixels in `[0, 1]` plus labels.
pub fn load_cifar10(source: &Cifar10Source) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in &source.paths {
        for r in read_cifar_batch(path, source.records_per_file)? {
            data.extend(r.pixels.iter().map(|&b| b as f64 / 255.0));
            labels.push(r.label as usize);
        }
    }
    if labels.is_empty() {
        return Err(Error::Config("no CIFAR-10 batch files given".into()));
    }
    let n = labels.len();
    Dataset::new(Inputs::Dense(Tensor::new(&[n, CIFAR_PIXELS], data)?), labels)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn tokens(d: &Dataset) -> &[[usize; SEQ_LEN]] {
        match &d.inputs {
            Inputs::Tokens(t) => t,
            Inputs::Dense(_) => panic!("expected tokens"),
        }
    }

    fn spec(p: usize, split: SplitMode) -> ModArithSpec {
        ModArithSpec {
            modulus: p,
            train_fraction: 0.2,
            seed: 3,
            split,
        }
    }

    #[test]
    fn modulus_two_enumeration() {
        let s = ModArithSpec {
            modulus: 2,
            train_fraction: 0.5,
            seed: 0,
            split: SplitMode::Unordered,
        };
        let split = gen_modular_dataset(&s).unwrap();
        assert_eq!(split.unordered_pair_count, 3);
        assert_eq!(split.train_units, 1);
        let mut all: Vec<((usize, usize), usize)> = tokens(&split.train)
            .iter()
            .chain(tokens(&split.test))
            .zip(split.train.labels.iter().chain(&split.test.labels))
            .map(|(t, &l)| ((t[0], t[2]), l))
            .collect();
        all.sort();
        assert_eq!(all, vec![((0, 0), 0), ((0, 1), 1), ((1, 0), 1), ((1, 1), 0)]);
    }

    #[test]
    fn modulus_117_counts() {
        let split = gen_modular_dataset(&spec(117, SplitMode::Unordered)).unwrap();
        assert_eq!(split.unordered_pair_count, 6903);
        assert_eq!(split.train_units, 1380);
        assert_eq!(split.train.len() + split.test.len(), 117 * 117);
    }

    #[test]
    fn unordered_split_keeps_mirrors_together() {
        let split = gen_modular_dataset(&spec(23, SplitMode::Unordered)).unwrap();
        let key = |t: &[usize; SEQ_LEN]| (t[0].min(t[2]), t[0].max(t[2]));
        let train: HashSet<_> = tokens(&split.train).iter().map(key).collect();
        let test: HashSet<_> = tokens(&split.test).iter().map(key).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 23 * 24 / 2);
        assert_eq!(train.len(), (0.2f64 * 276.0).floor() as usize);
        for (t, &l) in tokens(&split.train).iter().zip(&split.train.labels) {
            assert_eq!(l, (t[0] + t[2]) % 23);
            assert_eq!((t[1], t[3], t[4]), (23, 24, 25));
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let a = gen_modular_dataset(&spec(23, SplitMode::Unordered)).unwrap();
        let b = gen_modular_dataset(&spec(23, SplitMode::Unordered)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(23, SplitMode::Unordered);
        other.seed = 4;
        assert_ne!(a, gen_modular_dataset(&other).unwrap());
    }

    #[test]
    fn mirror_oracle_symmetry_baseline() {
        // Ordered split: a test pair's mirror sits in train with probability ≈ ρ,
        // so the oracle scores ≈ ρ + (1 − ρ)/p.
        let split = gen_modular_dataset(&spec(117, SplitMode::Ordered)).unwrap();
        let acc = mirror_oracle_accuracy(&split, 117, 0).unwrap();
        let expected = 0.2 + 0.8 / 117.0;
        assert!((acc - expected).abs() < 0.02, "ordered {acc}");
        // Unordered split: mirrors never cross, only chance remains.
        let split = gen_modular_dataset(&spec(117, SplitMode::Unordered)).unwrap();
        let acc = mirror_oracle_accuracy(&split, 117, 0).unwrap();
        assert!(acc < 0.02, "unordered {acc}");
    }

    #[test]
    fn warm_start_phases() {
        let s = WarmStartSpec {
            initial_fraction: 0.1,
            phase_epochs: 70,
            seed: 1,
        };
        let [a, b] = warm_start_stream(&s, 1000).unwrap();
        assert_eq!(a.indices.len(), 100);
        assert_eq!(b.indices.len(), 1000);
        assert_eq!((a.epochs, b.epochs), (70, 70));
        let full: HashSet<_> = b.indices.iter().collect();
        assert!(a.indices.iter().all(|i| full.contains(i)));
        assert_eq!(warm_start_stream(&s, 1000).unwrap()[0], a);

        let whole = WarmStartSpec {
            initial_fraction: 1.0,
            ..s
        };
        let [a, b] = warm_start_stream(&whole, 50).unwrap();
        assert_eq!(a, b);
        assert!(warm_start_stream(&WarmStartSpec { initial_fraction: 0.0, phase_epochs: 70, seed: 0 }, 10).is_err());
    }

    fn synth(spread: f64, classes: usize, per_class: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: classes,
            dim: classes.max(2) * 2,
            samples_per_class: per_class,
            spread,
            seed,
        }
    }

    fn nearest_mean_accuracy(spec: &SyntheticSpec, d: &Dataset) -> f64 {
        let Inputs::Dense(x) = &d.inputs else { panic!() };
        let means: Vec<Vec<f64>> = (0..spec.num_classes).map(|c| spec.class_mean(c)).collect();
        let mut correct = 0;
        for (i, &l) in d.labels.iter().enumerate() {
            let row = x.row(i);
            let mut best = (f64::MAX, 0);
            for (c, m) in means.iter().enumerate() {
                let dist: f64 = row.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if best.1 == l {
                correct += 1;
            }
        }
        correct as f64 / d.len() as f64
    }

    #[test]
    fn synthetic_separable_limit() {
        let s = synth(0.0, 8, 20, 1);
        let d = gen_synthetic_classification(&s).unwrap();
        assert_eq!(nearest_mean_accuracy(&s, &d), 1.0);
        assert_eq!(s.bayes_accuracy(), 1.0);
    }

    #[test]
    fn synthetic_balanced_labels() {
        let s = synth(0.5, 2, 37, 2);
        let d = gen_synthetic_classification(&s).unwrap();
        let ones = d.labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 37);
        assert_eq!(d.len(), 74);
        assert_eq!(d, gen_synthetic_classification(&s).unwrap());
    }

    #[test]
    fn bayes_accuracy_matches_nearest_mean_monte_carlo() {
        for (spread, classes) in [(0.4, 2), (0.5, 8), (0.7, 4)] {
            let s = synth(spread, classes, 40_000 / classes, 11);
            let d = gen_synthetic_classification(&s).unwrap();
            let mc = nearest_mean_accuracy(&s, &d);
            let q = s.bayes_accuracy();
            assert!((mc - q).abs() < 0.01, "spread {spread}: mc {mc} quadrature {q}");
        }
        // two classes: closed form Φ(1/(√2 σ))
        let s = synth(0.5, 2, 1, 0);
        let closed = normal_cdf(1.0 / (std::f64::consts::SQRT_2 * 0.5));
        assert!((s.bayes_accuracy() - closed).abs() < 1e-6);
    }

    fn records(n: usize, seed: u64) -> Vec<CifarRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| CifarRecord {
                label: rng.gen_range(0..10),
                pixels: (0..CIFAR_PIXELS).map(|_| rng.gen()).collect(),
            })
            .collect()
    }

    #[test]
    fn cifar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let recs = records(2, 4);
        write_cifar_batch(&path, &recs).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 2 * 3073);
        assert_eq!(read_cifar_batch(&path, 2).unwrap(), recs);
        let d = load_cifar10(&Cifar10Source {
            paths: vec![path.clone(), path],
            records_per_file: 2,
        })
        .unwrap();
        assert_eq!(d.len(), 4);
        let Inputs::Dense(x) = &d.inputs else { panic!() };
        assert_eq!(x.shape(), &[4, 3072]);
        assert_eq!(x.get(1, 1024), recs[1].pixels[1024] as f64 / 255.0);
        assert_eq!(d.labels[2], recs[0].label as usize);
    }

    #[test]
    fn cifar_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        fs::write(&path, vec![0u8; 100]).unwrap();
        let err = read_cifar_batch(&path, 10_000).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("30730000") && err.to_string().contains("100"));

        let mut bad = records(1, 0);
        bad[0].label = 10;
        let path = dir.path().join("bad.bin");
        write_cifar_batch(&path, &bad).unwrap();
        assert!(matches!(
            read_cifar_batch(&path, 1),
            Err(Error::CorruptRecord { index: 0, .. })
        ));
        assert!(matches!(read_cifar_batch(&dir.path().join("missing.bin"), 1), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn split_partitions_all_pairs(p in 2usize..30, rho in 0.05f64..0.95, seed in 0u64..1000, ordered in any::<bool>()) {
            let mode = if ordered { SplitMode::Ordered } else { SplitMode::Unordered };
            let s = ModArithSpec { modulus: p, train_fraction: rho, seed, split: mode };
            let split = gen_modular_dataset(&s).unwrap();
            let mut seen: Vec<(usize, usize)> = tokens(&split.train).iter().chain(tokens(&split.test)).map(|t| (t[0], t[2])).collect();
            seen.sort();
            let all: Vec<(usize, usize)> = (0..p).flat_map(|x| (0..p).map(move |y| (x, y))).collect();
            prop_assert_eq!(seen, all);
        }

        #[test]
        fn warm_start_subset_sizes(n in 1usize..500, frac in 0.01f64..1.0, seed in 0u64..100) {
            let s = WarmStartSpec { initial_fraction: frac, phase_epochs: 3, seed };
            let [a, b] = warm_start_stream(&s, n).unwrap();
            let k = ((frac * n as f64).round() as usize).clamp(1, n);
            prop_assert_eq!(a.indices.len(), k);
            prop_assert_eq!(b.indices.len(), n);
            let set: HashSet<_> = a.indices.iter().collect();
            prop_assert_eq!(set.len(), k);
            prop_assert!(a.indices.iter().all(|&i| i < n));
        }
    }
}
