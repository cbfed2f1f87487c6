use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{delta_a, delta_c, dead_units, effective_rank, FeatureSnapshot, MetricRecord};
use crate::models::{shrink_perturb, ForwardOutput, ModelSpec, Parameters, Role};
use crate::ndcore::{Tape, Tensor};
use crate::optim::{effective_lr, optimizer_step, project, OptimizerState, UpdateNorms};
use crate::schedule::{per_layer_multipliers, Scheduler};
use crate::tasks::{gen_modular_dataset, gen_synthetic_classification, warm_start_stream, Dataset};

/// Receives each logged record and, optionally, the parameters after every
/// completed step.
pub trait Observer {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;

    fn after_step(&mut self, _step: u64, _params: &Parameters) -> Result<()> {
        Ok(())
    }
}

impl Observer for Vec<MetricRecord> {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub params: Parameters,
    pub steps: u64,
    /// Steps at which the schedule was reset.
    pub resets: Vec<u64>,
}

/// Train and test sets plus the frozen probe batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
    pub probe: Dataset,
}

pub fn build_data(cfg: &RunConfig) -> Result<RunData> {
    let (train, test) = match cfg.experiment {
        Experiment::Grok => {
            let split = gen_modular_dataset(&cfg.mod_arith())?;
            (split.train, split.test)
        }
        Experiment::Warmstart => (
            gen_synthetic_classification(&cfg.synthetic(0))?,
            gen_synthetic_classification(&cfg.synthetic(1))?,
        ),
        Experiment::Theory => return Err(Error::Config("the theory experiment has no training data".into())),
    };
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let n = cfg.probe_size.min(test.len());
    let probe = test.select(&(0..n).collect::<Vec<_>>());
    Ok(RunData { train, test, probe })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy.
pub fn evaluate(model: &ModelSpec, params: &Parameters, data: &Dataset) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let bound = params.bind_constant(&tape);
    let logits = model.forward_on(&tape, &bound, &data.inputs)?.logits;
    let loss = logits.cross_entropy(&data.labels)?.value().data()[0];
    let l = logits.value();
    let correct = (0..l.rows()).filter(|&i| argmax(l.row(i)) == data.labels[i]).count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// One forward/backward pass; returns the loss and gradients.
fn loss_and_grads(
    model: &ModelSpec,
    params: &Parameters,
    batch: &Dataset,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = model.forward_on(&tape, &bound, &batch.inputs)?;
    let loss = out.logits.cross_entropy(&batch.labels)?;
    let value = loss.value().data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, bound.collect(&grads)))
}

fn snapshots(out: &ForwardOutput, step: u64) -> Result<Vec<FeatureSnapshot>> {
    out.preactivations
        .iter()
        .map(|(layer, pre)| FeatureSnapshot::from_preactivations(layer.clone(), step, pre))
        .collect()
}

/// The stateful part of a run: everything Algorithm-style training mutates.
struct Trainer<'a> {
    cfg: &'a RunConfig,
    model: ModelSpec,
    data: &'a RunData,
    params: Parameters,
    opt: OptimizerState,
    sched: Scheduler,
    multipliers: BTreeMap<String, f64>,
    step: u64,
    last_update: UpdateNorms,
    previous: Option<Vec<FeatureSnapshot>>,
    rewarm_since_log: bool,
    resets: Vec<u64>,
    last_test_acc: f64,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, data: &'a RunData, total: u64) -> Result<Self> {
        let model = cfg.model();
        let params = model.init_params(cfg.seed)?;
        let sched = Scheduler::new(cfg.schedule_for(total))?;
        let opt = OptimizerState::new(cfg.optimizer, sched.lr())?;
        let multipliers = per_layer_multipliers(cfg.per_layer, &params)?;
        let last_update = params.names().map(|n| (n.to_string(), 0.0)).collect();
        Ok(Self {
            cfg,
            model,
            data,
            params,
            opt,
            sched,
            multipliers,
            step: 0,
            last_update,
            previous: None,
            rewarm_since_log: false,
            resets: Vec::new(),
            last_test_acc: 0.0,
        })
    }

    /// Update, then project, then the re-warm check.
    fn step(&mut self, batch: &Dataset, obs: &mut dyn Observer) -> Result<()> {
        let lr = self.sched.lr();
        self.opt.set_lr(lr)?;
        let (loss, grads) = loss_and_grads(&self.model, &self.params, batch)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: format!("training loss {loss}"),
            });
        }
        self.last_update = optimizer_step(
            &mut self.params,
            &grads,
            &mut self.opt,
            &self.cfg.decay(),
            Some(&self.multipliers),
        )?;
        if self.cfg.project && self.cfg.projection().due(self.step) {
            project(&mut self.params, &self.cfg.projection())?;
        }
        if self.sched.observe(loss)? {
            self.mark_reset();
        }
        obs.after_step(self.step, &self.params)?;
        if self.step % self.cfg.cadence == 0 {
            self.log(obs)?;
        }
        Ok(())
    }

    fn mark_reset(&mut self) {
        self.rewarm_since_log = true;
        self.resets.push(self.step);
    }

    fn log(&mut self, obs: &mut dyn Observer) -> Result<()> {
        let record = self.measure()?;
        self.last_test_acc = record.test_acc;
        obs.record(&record)
    }

    fn measure(&mut self) -> Result<MetricRecord> {
        let (train_loss, train_acc) = evaluate(&self.model, &self.params, &self.data.train)?;
        let (test_loss, test_acc) = evaluate(&self.model, &self.params, &self.data.test)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: format!("training loss {train_loss}"),
            });
        }
        let out = self.model.forward(&self.params, &self.data.probe.inputs)?;
        let snaps = snapshots(&out, self.step)?;
        let mut rec = MetricRecord {
            step: self.step,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            lr: self.opt.lr(),
            update_norm: self.last_update.clone(),
            dead_units: snaps.iter().map(dead_units).sum(),
            rewarm: std::mem::take(&mut self.rewarm_since_log),
            ..Default::default()
        };
        for (name, p) in self.params.iter() {
            let norm = p.tensor.frobenius_norm();
            rec.param_norm.insert(name.to_string(), norm);
            if matches!(p.role, Role::Weight | Role::Head | Role::Embedding) && norm > 0.0 {
                let lr = rec.lr * self.multipliers.get(name).copied().unwrap_or(1.0);
                rec.elr.insert(name.to_string(), effective_lr(lr, norm, self.cfg.optimizer)?);
            }
        }
        for (i, s) in snaps.iter().enumerate() {
            let (dc, da) = match &self.previous {
                Some(prev) => {
                    // a layer whose features are all zero has no covariance
                    let dc = if s.features.frobenius_norm() > 0.0 && prev[i].features.frobenius_norm() > 0.0 {
                        delta_c(&prev[i], s)?
                    } else {
                        0.0
                    };
                    (dc, delta_a(&prev[i], s)?)
                }
                None => (0.0, 0.0),
            };
            rec.delta_c.insert(s.layer.clone(), dc);
            rec.delta_a.insert(s.layer.clone(), da);
        }
        if let Some(att) = &out.attention_output {
            if att.frobenius_norm() > 0.0 {
                rec.attention_rank = Some(effective_rank(att)?);
            }
        }
        self.previous = Some(snaps);
        rec.validate()?;
        Ok(rec)
    }
}

/// Runs the configured experiment, reporting to `obs`. A record is logged at
/// step 0 and after every `cadence` steps.
pub fn train_loop(cfg: &RunConfig, data: &RunData, obs: &mut dyn Observer) -> Result<RunOutcome> {
    cfg.validate()?;
    let total = cfg.total_steps(data.train.len());
    let mut t = Trainer::new(cfg, data, total)?;
    t.log(obs)?;
    match cfg.experiment {
        Experiment::Grok => {
            let stop = cfg.stop_at_test_acc;
            let mut stop_deadline: Option<u64> = None;
            while t.step < total {
                t.step(&data.train, obs)?;
                if let Some(target) = stop {
                    if stop_deadline.is_none() && t.step % cfg.cadence == 0 && t.last_test_acc >= target {
                        stop_deadline = Some(t.step + cfg.stop_patience);
                    }
                    if stop_deadline.is_some_and(|d| t.step >= d.max(cfg.min_steps)) {
                        break;
                    }
                }
            }
        }
        Experiment::Warmstart => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0ba7c4);
            let phases = if cfg.fresh {
                let all: Vec<usize> = (0..data.train.len()).collect();
                vec![(all, cfg.phase_epochs)]
            } else {
                warm_start_stream(&cfg.warm_start(), data.train.len())?
                    .into_iter()
                    .map(|p| (p.indices, p.epochs))
                    .collect()
            };
            for (k, (indices, epochs)) in phases.iter().enumerate() {
                if k > 0 {
                    if let Some(s) = cfg.shrink {
                        t.params = shrink_perturb(&t.params, s, None, cfg.seed.wrapping_add(k as u64))?;
                    }
                    if cfg.reset_at_phase {
                        t.sched.reset();
                        t.mark_reset();
                    }
                }
                let mut order = indices.clone();
                for _ in 0..*epochs {
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(cfg.batch_size) {
                        let batch = data.train.select(chunk);
                        t.step(&batch, obs)?;
                    }
                }
            }
        }
        Experiment::Theory => return Err(Error::Config("the theory experiment has no training loop".into())),
    }
    if t.step % cfg.cadence != 0 {
        t.log(obs)?;
    }
    Ok(RunOutcome {
        params: t.params,
        steps: t.step,
        resets: t.resets,
    })
}
