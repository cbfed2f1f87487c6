//! Learning-rate schedules, the CUSUM changepoint trigger and the adaptive
//! re-warming controller.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Parameters, Role};

/// Linear warmup from `floor` to `peak`, then cosine decay back to `floor`
/// at `total_steps`. During the first `delay_steps` the rate sits at
/// `floor` and the warmup has not started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupCosine {
    pub warmup_steps: u64,
    pub peak: f64,
    pub floor: f64,
    /// Steps from the start of warmup to the end of the decay.
    pub total_steps: u64,
    #[serde(default)]
    pub delay_steps: u64,
}

impl WarmupCosine {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.peak >= self.floor && self.peak.is_finite()) {
            return Err(Error::Config(format!(
                "warmup_cosine needs 0 < floor <= peak, got floor {} peak {}",
                self.floor, self.peak
            )));
        }
        if self.total_steps < self.warmup_steps {
            return Err(Error::Config("warmup_cosine total_steps must cover the warmup".into()));
        }
        Ok(())
    }

    /// Steps until the schedule reaches its final floor.
    pub fn length(&self) -> u64 {
        self.delay_steps + self.total_steps
    }

    fn at(&self, t: u64, peak: f64) -> f64 {
        if t < self.delay_steps {
            return self.floor;
        }
        let t = t - self.delay_steps;
        if t < self.warmup_steps {
            return self.floor + (peak - self.floor) * t as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps - self.warmup_steps;
        if decay == 0 || t >= self.total_steps {
            return if t >= self.total_steps { self.floor } else { peak };
        }
        let u = (t - self.warmup_steps) as f64 / decay as f64;
        self.floor + 0.5 * (peak - self.floor) * (1.0 + (PI * u).cos())
    }
}

/// Smooth cosine oscillation starting at `max_lr`, reaching `min_lr` at half
/// period and returning to `max_lr` at each period boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cyclic {
    pub period: u64,
    pub min_lr: f64,
    pub max_lr: f64,
    #[serde(default)]
    pub stop_after_cycles: Option<u64>,
    #[serde(default)]
    pub terminal_lr: Option<f64>,
}

impl Cyclic {
    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::Config(format!("cycle period must be at least 2, got {}", self.period)));
        }
        if !(self.min_lr > 0.0 && self.max_lr >= self.min_lr && self.max_lr.is_finite()) {
            return Err(Error::Config(format!(
                "cyclic needs 0 < min_lr <= max_lr, got {} and {}",
                self.min_lr, self.max_lr
            )));
        }
        if let Some(lr) = self.terminal_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("terminal_lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn at(&self, t: u64) -> f64 {
        if let Some(stop) = self.stop_after_cycles {
            if t >= stop.saturating_mul(self.period) {
                return self.terminal_lr.unwrap_or(self.min_lr);
            }
        }
        let u = (t % self.period) as f64 / self.period as f64;
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (2.0 * PI * u).cos())
    }
}

/// A CUSUM level: fixed, or a multiple of the rolling loss standard
/// deviation with a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Level {
    Absolute { value: f64 },
    StdMultiple { multiple: f64, #[serde(default)] min: f64 },
}

impl Level {
    fn resolve(&self, std: f64) -> f64 {
        match *self {
            Level::Absolute { value } => value,
            Level::StdMultiple { multiple, min } => (multiple * std).max(min),
        }
    }

    fn validate(&self, what: &str, positive: bool) -> Result<()> {
        let (v, floor) = match *self {
            Level::Absolute { value } => (value, value),
            Level::StdMultiple { multiple, min } => (multiple, min),
        };
        let ok = v >= 0.0 && v.is_finite() && floor >= 0.0 && (!positive || floor > 0.0);
        if !ok {
            return Err(Error::Config(format!("invalid CUSUM {what}: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CusumSpec {
    /// Length of the trailing reference window.
    pub window: usize,
    /// Drift allowance κ.
    pub drift: Level,
    /// Decision threshold h.
    pub threshold: Level,
}

impl Default for CusumSpec {
    fn default() -> Self {
        Self {
            window: 200,
            drift: Level::StdMultiple { multiple: 0.5, min: 0.0 },
            threshold: Level::StdMultiple {
                multiple: 10.0,
                min: 1e-8,
            },
        }
    }
}

impl CusumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config("CUSUM window must hold at least 2 losses".into()));
        }
        self.drift.validate("drift", false)?;
        self.threshold.validate("threshold", true)
    }
}

/// One-sided CUSUM statistic plus its reference window.
///
/// Losses seen while the statistic is positive are held back and only
/// join the reference window once the statistic returns to zero, so the
/// reference stays anchored to in-control data during an excursion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CusumState {
    pub s_plus: f64,
    window: VecDeque<f64>,
    pending: Vec<f64>,
}

impl CusumState {
    /// Mean and population standard deviation of the reference window.
    pub fn reference(&self) -> Option<(f64, f64)> {
        if self.window.is_empty() {
            return None;
        }
        let n = self.window.len() as f64;
        // offset by the first entry so a constant window has an exact mean
        let first = self.window[0];
        let mean = first + self.window.iter().map(|v| v - first).sum::<f64>() / n;
        let var = self.window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }

    fn push(&mut self, loss: f64, cap: usize) {
        self.window.push_back(loss);
        while self.window.len() > cap {
            self.window.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adaptive {
    pub inner: WarmupCosine,
    #[serde(default)]
    pub trigger: CusumSpec,
    /// Steps after a trigger during which no new trigger fires. Defaults
    /// to the inner schedule length.
    #[serde(default)]
    pub cooldown: Option<u64>,
    /// Peak used after the first re-warm, if different from the inner peak.
    #[serde(default)]
    pub rewarm_peak: Option<f64>,
}

impl Adaptive {
    pub fn cooldown_steps(&self) -> u64 {
        self.cooldown.unwrap_or_else(|| self.inner.length())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleSpec {
    Constant { lr: f64 },
    WarmupCosine(WarmupCosine),
    Cyclic(Cyclic),
    Adaptive(Adaptive),
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScheduleSpec::Constant { lr } => {
                if !(*lr >= 0.0 && lr.is_finite()) {
                    return Err(Error::Config(format!("constant rate must be non-negative, got {lr}")));
                }
                Ok(())
            }
            ScheduleSpec::WarmupCosine(w) => w.validate(),
            ScheduleSpec::Cyclic(c) => c.validate(),
            ScheduleSpec::Adaptive(a) => {
                a.inner.validate()?;
                a.trigger.validate()?;
                if let Some(p) = a.rewarm_peak {
                    if !(p >= a.inner.floor && p.is_finite()) {
                        return Err(Error::Config(format!("rewarm_peak {p} is below the floor")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Smallest and largest rate the schedule can emit.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            ScheduleSpec::Constant { lr } => (*lr, *lr),
            ScheduleSpec::WarmupCosine(w) => (w.floor, w.peak),
            ScheduleSpec::Cyclic(c) => {
                let t = c.terminal_lr.filter(|_| c.stop_after_cycles.is_some());
                let lo = t.map_or(c.min_lr, |t| t.min(c.min_lr));
                let hi = t.map_or(c.max_lr, |t| t.max(c.max_lr));
                (lo, hi)
            }
            ScheduleSpec::Adaptive(a) => (a.inner.floor, a.inner.peak.max(a.rewarm_peak.unwrap_or(0.0))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleState {
    /// Optimizer steps taken since the start or the last reset.
    pub steps_since_reset: u64,
    pub completed_cycles: u64,
    pub cusum: CusumState,
    pub cooldown_remaining: u64,
    pub resets: u64,
}

/// Rate for the next optimizer step.
pub fn lr_at(spec: &ScheduleSpec, state: &ScheduleState) -> f64 {
    let t = state.steps_since_reset;
    match spec {
        ScheduleSpec::Constant { lr } => *lr,
        ScheduleSpec::WarmupCosine(w) => w.at(t, w.peak),
        ScheduleSpec::Cyclic(c) => c.at(t),
        ScheduleSpec::Adaptive(a) => {
            let peak = match a.rewarm_peak {
                Some(p) if state.resets > 0 => p,
                _ => a.inner.peak,
            };
            a.inner.at(t, peak)
        }
    }
}

/// Moves the schedule clock forward one optimizer step.
pub fn advance(spec: &ScheduleSpec, state: &mut ScheduleState) {
    state.steps_since_reset += 1;
    if let ScheduleSpec::Cyclic(c) = spec {
        let done = state.steps_since_reset / c.period;
        state.completed_cycles = c.stop_after_cycles.map_or(done, |s| done.min(s));
    }
}

/// Feeds one loss into the CUSUM statistic:
/// `S⁺ ← max(0, S⁺ + loss − μ̂ − κ)`.
///
/// No statistic accumulates until the reference window is full, nor while
/// a cooldown is running. On a trigger `S⁺` returns to 0 and the cooldown
/// restarts.
pub fn cusum_update(spec: &CusumSpec, cooldown: u64, state: &mut ScheduleState, loss: f64) -> Result<bool> {
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: state.steps_since_reset,
            what: format!("loss {loss} fed to the changepoint detector"),
        });
    }
    let c = &mut state.cusum;
    if state.cooldown_remaining > 0 {
        state.cooldown_remaining -= 1;
        c.s_plus = 0.0;
        c.push(loss, spec.window);
        return Ok(false);
    }
    if c.window.len() < spec.window {
        c.push(loss, spec.window);
        return Ok(false);
    }
    let (mean, std) = c.reference().expect("window is full");
    let kappa = spec.drift.resolve(std);
    let h = spec.threshold.resolve(std);
    c.s_plus = (c.s_plus + loss - mean - kappa).max(0.0);
    if c.s_plus > h {
        c.s_plus = 0.0;
        c.pending.clear();
        state.cooldown_remaining = cooldown;
        return Ok(true);
    }
    c.pending.push(loss);
    if c.s_plus == 0.0 {
        for v in std::mem::take(&mut c.pending) {
            c.push(v, spec.window);
        }
    }
    Ok(false)
}

/// Restarts the learning-rate schedule. Touches only schedule state.
pub fn reset_lr(state: &mut ScheduleState, cooldown: u64) {
    if state.steps_since_reset > 0 {
        state.resets += 1;
    }
    state.steps_since_reset = 0;
    state.cusum.s_plus = 0.0;
    state.cusum.pending.clear();
    state.cooldown_remaining = cooldown;
}

/// One controller tick after an optimizer step whose loss was `loss`:
/// advance the clock, run the trigger and reset on a changepoint. Returns
/// the next rate and whether a reset happened.
pub fn rewarm_controller_step(spec: &ScheduleSpec, state: &mut ScheduleState, loss: f64) -> Result<(f64, bool)> {
    let ScheduleSpec::Adaptive(a) = spec else {
        return Err(Error::Contract("re-warm controller needs an adaptive schedule".into()));
    };
    advance(spec, state);
    let fired = cusum_update(&a.trigger, a.cooldown_steps(), state, loss)?;
    if fired {
        reset_lr(state, a.cooldown_steps());
    }
    Ok((lr_at(spec, state), fired))
}

/// Owns a spec and its state; drives any schedule kind from a loss stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    pub spec: ScheduleSpec,
    pub state: ScheduleState,
}

impl Scheduler {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: ScheduleState::default(),
        })
    }

    pub fn lr(&self) -> f64 {
        lr_at(&self.spec, &self.state)
    }

    /// Records a finished step; returns true when the schedule was reset.
    pub fn observe(&mut self, loss: f64) -> Result<bool> {
        if matches!(self.spec, ScheduleSpec::Adaptive(_)) {
            return Ok(rewarm_controller_step(&self.spec, &mut self.state, loss)?.1);
        }
        advance(&self.spec, &mut self.state);
        Ok(false)
    }

    /// Manual reset, used for schedules aligned to known task boundaries.
    pub fn reset(&mut self) {
        let cooldown = match &self.spec {
            ScheduleSpec::Adaptive(a) => a.cooldown_steps(),
            _ => 0,
        };
        reset_lr(&mut self.state, cooldown);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerLayerKind {
    #[default]
    Constant,
    FastFeatures,
    SlowFeatures,
    EvenRatioAbs,
}

fn is_head(name: &str) -> bool {
    name == "head" || name.starts_with("head.")
}

/// Per-tensor learning-rate multipliers.
///
/// Scales and biases inherit the multiplier of the tensor whose name they
/// extend (`hidden0.scale` follows `hidden0`), or 1 if there is none.
pub fn per_layer_multipliers(kind: PerLayerKind, params: &Parameters) -> Result<BTreeMap<String, f64>> {
    if params.is_empty() {
        return Err(Error::Contract("no parameters to assign rates to".into()));
    }
    let mut out = BTreeMap::new();
    match kind {
        PerLayerKind::Constant => {
            for name in params.names() {
                out.insert(name.to_string(), 1.0);
            }
        }
        PerLayerKind::FastFeatures | PerLayerKind::SlowFeatures => {
            let (head, body) = if kind == PerLayerKind::FastFeatures { (0.1, 1.0) } else { (1.0, 0.1) };
            for name in params.names() {
                let m = if is_head(name) { head } else { body };
                out.insert(name.to_string(), m);
            }
        }
        PerLayerKind::EvenRatioAbs => {
            let magnitudes: BTreeMap<&str, f64> = params
                .iter()
                .filter(|(_, p)| matches!(p.role, Role::Weight | Role::Head | Role::Embedding))
                .map(|(n, p)| (n, p.tensor.mean_abs()))
                .collect();
            let max = magnitudes.values().copied().fold(0.0, f64::max);
            if !(max > 0.0) {
                return Err(Error::Degenerate {
                    name: "all layers".into(),
                    reason: "every weight tensor is zero".into(),
                });
            }
            for (name, p) in params.iter() {
                let m = match p.role {
                    Role::Weight | Role::Head | Role::Embedding => magnitudes[name] / max,
                    Role::NormScale | Role::Bias => name
                        .rsplit_once('.')
                        .and_then(|(owner, _)| magnitudes.get(owner))
                        .map_or(1.0, |v| v / max),
                };
                if !(m > 0.0) {
                    return Err(Error::Degenerate {
                        name: name.to_string(),
                        reason: "zero mean magnitude gives a zero rate".into(),
                    });
                }
                out.insert(name.to_string(), m);
            }
        }
    }
    Ok(out)
}
