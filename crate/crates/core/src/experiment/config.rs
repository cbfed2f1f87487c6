use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{MlpSpec, ModelSpec, Role, TransformerSpec};
use crate::optim::{DecayConfig, OptimizerKind, ProjectionConfig};
use crate::schedule::{Adaptive, CusumSpec, Cyclic, Level, PerLayerKind, ScheduleSpec, WarmupCosine};
use crate::tasks::{ModArithSpec, SplitMode, SyntheticSpec, WarmStartSpec};
use crate::theorylab::TheoryGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Full-batch modular addition with a transformer.
    Grok,
    /// Two-phase warm start on Gaussian clusters with an MLP.
    Warmstart,
    /// Monte-Carlo check of the rotation and flip formulas.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    WarmupCosine,
    Cyclic,
    Adaptive,
}

/// Flat run configuration. Every key is optional except `experiment` and
/// `seed`; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,

    // model
    #[serde(default = "d::d_model")]
    pub d_model: usize,
    #[serde(default = "d::num_heads")]
    pub num_heads: usize,
    #[serde(default = "d::qkv_dim")]
    pub qkv_dim: usize,
    #[serde(default = "d::ffn_hidden")]
    pub ffn_hidden: usize,
    #[serde(default = "d::hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "d::yes")]
    pub use_norm: bool,

    // optimizer
    #[serde(default = "d::optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub scale_decay: f64,
    #[serde(default = "d::yes")]
    pub project: bool,
    #[serde(default = "d::one")]
    pub project_interval: u64,
    #[serde(default = "d::project_roles")]
    pub project_roles: Vec<Role>,
    #[serde(default)]
    pub per_layer: PerLayerKind,

    // schedule
    #[serde(default = "d::schedule")]
    pub schedule: ScheduleKind,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::warmup_steps")]
    pub warmup_steps: u64,
    #[serde(default = "d::peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "d::floor_lr")]
    pub floor_lr: f64,
    /// Warmup plus decay length; defaults to the remaining budget.
    #[serde(default)]
    pub decay_steps: Option<u64>,
    #[serde(default)]
    pub delay_steps: u64,
    #[serde(default = "d::cycle_period")]
    pub cycle_period: u64,
    #[serde(default = "d::floor_lr")]
    pub min_lr: f64,
    #[serde(default = "d::peak_lr")]
    pub max_lr: f64,
    #[serde(default)]
    pub stop_after_cycles: Option<u64>,
    #[serde(default)]
    pub terminal_lr: Option<f64>,
    #[serde(default = "d::cusum_window")]
    pub cusum_window: usize,
    #[serde(default = "d::cusum_drift")]
    pub cusum_drift_std: f64,
    #[serde(default = "d::cusum_threshold")]
    pub cusum_threshold_std: f64,
    #[serde(default)]
    pub cooldown: Option<u64>,
    #[serde(default)]
    pub rewarm_peak: Option<f64>,

    // grok task
    #[serde(default = "d::modulus")]
    pub modulus: usize,
    #[serde(default = "d::train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split: SplitMode,
    #[serde(default = "d::steps")]
    pub steps: u64,
    /// Stop once test accuracy reaches this value (checked at log steps).
    #[serde(default)]
    pub stop_at_test_acc: Option<f64>,
    /// Keep training this many steps after the stop condition is met.
    #[serde(default)]
    pub stop_patience: u64,
    /// Never stop early before this step.
    #[serde(default)]
    pub min_steps: u64,

    // warm-start task
    #[serde(default = "d::num_classes")]
    pub num_classes: usize,
    #[serde(default = "d::input_dim")]
    pub input_dim: usize,
    #[serde(default = "d::samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "d::test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d::spread")]
    pub spread: f64,
    #[serde(default = "d::initial_fraction")]
    pub initial_fraction: f64,
    #[serde(default = "d::phase_epochs")]
    pub phase_epochs: usize,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    /// Train on the full data for one phase only, from initialization.
    #[serde(default)]
    pub fresh: bool,
    /// Restart the schedule at the phase boundary.
    #[serde(default)]
    pub reset_at_phase: bool,
    /// Shrink-and-perturb factor applied at the phase boundary.
    #[serde(default)]
    pub shrink: Option<f64>,

    // theory grid
    #[serde(default = "d::grid_lrs")]
    pub grid_lrs: Vec<f64>,
    #[serde(default = "d::grid_sigmas")]
    pub grid_sigmas: Vec<f64>,
    #[serde(default = "d::grid_alphas")]
    pub grid_alphas: Vec<f64>,
    #[serde(default = "d::grid_dim")]
    pub grid_dim: usize,
    #[serde(default = "d::grid_samples")]
    pub grid_samples: usize,

    // logging
    #[serde(default = "d::cadence")]
    pub cadence: u64,
    #[serde(default = "d::probe_size")]
    pub probe_size: usize,
}

mod d {
    use super::*;

    pub fn d_model() -> usize {
        128
    }
    pub fn num_heads() -> usize {
        4
    }
    pub fn qkv_dim() -> usize {
        32
    }
    pub fn ffn_hidden() -> usize {
        512
    }
    pub fn hidden_dims() -> Vec<usize> {
        vec![256, 256]
    }
    pub fn yes() -> bool {
        true
    }
    pub fn one() -> u64 {
        1
    }
    pub fn optimizer() -> OptimizerKind {
        OptimizerKind::Adam
    }
    pub fn project_roles() -> Vec<Role> {
        vec![Role::Weight]
    }
    pub fn schedule() -> ScheduleKind {
        ScheduleKind::Constant
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn warmup_steps() -> u64 {
        1000
    }
    pub fn peak_lr() -> f64 {
        0.01
    }
    pub fn floor_lr() -> f64 {
        1e-4
    }
    pub fn cycle_period() -> u64 {
        1000
    }
    pub fn cusum_window() -> usize {
        200
    }
    pub fn cusum_drift() -> f64 {
        0.5
    }
    pub fn cusum_threshold() -> f64 {
        10.0
    }
    pub fn modulus() -> usize {
        23
    }
    pub fn train_fraction() -> f64 {
        0.2
    }
    pub fn steps() -> u64 {
        50_000
    }
    pub fn num_classes() -> usize {
        8
    }
    pub fn input_dim() -> usize {
        64
    }
    pub fn samples_per_class() -> usize {
        500
    }
    pub fn test_per_class() -> usize {
        250
    }
    pub fn spread() -> f64 {
        0.5
    }
    pub fn initial_fraction() -> f64 {
        0.1
    }
    pub fn phase_epochs() -> usize {
        70
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn grid_lrs() -> Vec<f64> {
        TheoryGrid::default().lrs
    }
    pub fn grid_sigmas() -> Vec<f64> {
        TheoryGrid::default().sigmas
    }
    pub fn grid_alphas() -> Vec<f64> {
        TheoryGrid::default().alphas
    }
    pub fn grid_dim() -> usize {
        512
    }
    pub fn grid_samples() -> usize {
        100_000
    }
    pub fn cadence() -> u64 {
        100
    }
    pub fn probe_size() -> usize {
        256
    }
}

impl RunConfig {
    /// Parses TOML, applies `key=value` overrides, then validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            table.insert(key.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut echo = self.clone();
        echo.out_dir = None;
        hex::encode(Sha256::digest(echo.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be at least 1".into()));
        }
        match self.experiment {
            Experiment::Theory => {
                self.theory_grid();
                return Ok(());
            }
            Experiment::Grok => {
                self.mod_arith().validate()?;
                if self.steps == 0 {
                    return Err(Error::Config("steps must be positive".into()));
                }
            }
            Experiment::Warmstart => {
                self.synthetic(0).validate()?;
                self.warm_start().validate()?;
                if self.batch_size == 0 {
                    return Err(Error::Config("batch_size must be positive".into()));
                }
                if let Some(s) = self.shrink {
                    if !(s > 0.0 && s < 1.0) {
                        return Err(Error::Config(format!("shrink must lie in (0, 1), got {s}")));
                    }
                }
            }
        }
        self.model().validate()?;
        self.decay().validate()?;
        self.projection().validate()?;
        self.schedule_spec()?.validate()
    }

    pub fn model(&self) -> ModelSpec {
        match self.experiment {
            Experiment::Grok | Experiment::Theory => ModelSpec::Transformer(TransformerSpec {
                modulus: self.modulus,
                d_model: self.d_model,
                num_heads: self.num_heads,
                qkv_dim: self.qkv_dim,
                ffn_hidden: self.ffn_hidden,
                use_norm: self.use_norm,
            }),
            Experiment::Warmstart => ModelSpec::Mlp(MlpSpec {
                input_dim: self.input_dim,
                hidden_dims: self.hidden_dims.clone(),
                num_classes: self.num_classes,
                use_norm: self.use_norm,
                bias: false,
            }),
        }
    }

    pub fn decay(&self) -> DecayConfig {
        DecayConfig {
            weight_decay: self.weight_decay,
            scale_decay: self.scale_decay,
        }
    }

    pub fn projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            interval: self.project_interval,
            roles: self.project_roles.clone(),
        }
    }

    /// Total optimizer steps for the run.
    pub fn total_steps(&self, train_len: usize) -> u64 {
        match self.experiment {
            Experiment::Grok | Experiment::Theory => self.steps,
            Experiment::Warmstart => {
                let per_epoch = |n: usize| n.div_ceil(self.batch_size) as u64;
                let phases = crate::tasks::warm_start_stream(&self.warm_start(), train_len.max(1));
                match phases {
                    Ok([a, b]) if !self.fresh => {
                        per_epoch(a.indices.len()) * a.epochs as u64 + per_epoch(b.indices.len()) * b.epochs as u64
                    }
                    _ => per_epoch(train_len) * self.phase_epochs as u64,
                }
            }
        }
    }

    fn warmup_cosine(&self, total: u64) -> WarmupCosine {
        WarmupCosine {
            warmup_steps: self.warmup_steps,
            peak: self.peak_lr,
            floor: self.floor_lr,
            total_steps: self
                .decay_steps
                .unwrap_or_else(|| total.saturating_sub(self.delay_steps).max(self.warmup_steps)),
            delay_steps: self.delay_steps,
        }
    }

    /// Schedule with the decay length resolved against `total` steps.
    pub fn schedule_for(&self, total: u64) -> ScheduleSpec {
        match self.schedule {
            ScheduleKind::Constant => ScheduleSpec::Constant { lr: self.lr },
            ScheduleKind::WarmupCosine => ScheduleSpec::WarmupCosine(self.warmup_cosine(total)),
            ScheduleKind::Cyclic => ScheduleSpec::Cyclic(Cyclic {
                period: self.cycle_period,
                min_lr: self.min_lr,
                max_lr: self.max_lr,
                stop_after_cycles: self.stop_after_cycles,
                terminal_lr: self.terminal_lr,
            }),
            ScheduleKind::Adaptive => ScheduleSpec::Adaptive(Adaptive {
                inner: self.warmup_cosine(total),
                trigger: CusumSpec {
                    window: self.cusum_window,
                    drift: Level::StdMultiple {
                        multiple: self.cusum_drift_std,
                        min: 0.0,
                    },
                    threshold: Level::StdMultiple {
                        multiple: self.cusum_threshold_std,
                        min: 1e-8,
                    },
                },
                cooldown: self.cooldown,
                rewarm_peak: self.rewarm_peak,
            }),
        }
    }

    fn schedule_spec(&self) -> Result<ScheduleSpec> {
        let total = match self.experiment {
            Experiment::Warmstart => {
                self.total_steps(self.num_classes * self.samples_per_class)
            }
            _ => self.steps,
        };
        Ok(self.schedule_for(total))
    }

    pub fn mod_arith(&self) -> ModArithSpec {
        ModArithSpec {
            modulus: self.modulus,
            train_fraction: self.train_fraction,
            seed: self.seed,
            split: self.split,
        }
    }

    /// Training clusters use `seed`; the test set uses an offset stream.
    pub fn synthetic(&self, stream: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            dim: self.input_dim,
            samples_per_class: if stream == 0 {
                self.samples_per_class
            } else {
                self.test_per_class
            },
            spread: self.spread,
            seed: self.seed.wrapping_mul(2).wrapping_add(stream),
        }
    }

    pub fn warm_start(&self) -> WarmStartSpec {
        WarmStartSpec {
            initial_fraction: self.initial_fraction,
            phase_epochs: self.phase_epochs,
            seed: self.seed,
        }
    }

    pub fn theory_grid(&self) -> TheoryGrid {
        TheoryGrid {
            lrs: self.grid_lrs.clone(),
            sigmas: self.grid_sigmas.clone(),
            alphas: self.grid_alphas.clone(),
            input_dim: self.grid_dim,
            width: self.grid_dim,
            samples: self.grid_samples,
            seed: self.seed,
            rel_tol: 0.01,
        }
    }
}

/// Override values are TOML literals when they parse as one, bare strings
/// otherwise (`optimizer=sgd`).
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
