//! Experiment runner: configuration, the training loop, metric logs, run
//! manifests and summaries.

mod config;
mod logging;
mod report;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Parameters;
use crate::theorylab::{validate_grid, GridRow};

pub use config::{Experiment, RunConfig, ScheduleKind};
pub use logging::{
    emit_logs, read_csv_log, read_jsonl_log, LogSchema, LogWriter, BASE_COLUMNS, CSV_FILE, JSONL_FILE,
};
pub use report::{grok_step_summary, warmstart_report, ArmResult, GrokSummary, WarmstartReport, REACHED};
pub use train::{build_data, evaluate, train_loop, Observer, RunData, RunOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const PARAMS_FILE: &str = "params.json";
pub const THEORY_FILE: &str = "theory.csv";

/// Named configurations shipped with the crate.
pub const PRESETS: [(&str, &str); 7] = [
    ("grok", include_str!("../../presets/grok.toml")),
    ("grok-control", include_str!("../../presets/grok-control.toml")),
    ("warmstart-fresh", include_str!("../../presets/warmstart-fresh.toml")),
    ("warmstart-constant", include_str!("../../presets/warmstart-constant.toml")),
    ("warmstart-rewarm", include_str!("../../presets/warmstart-rewarm.toml")),
    ("warmstart-shrink", include_str!("../../presets/warmstart-shrink.toml")),
    ("theory", include_str!("../../presets/theory.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub version: String,
    pub status: RunStatus,
    pub steps: Option<u64>,
    pub message: Option<String>,
}

impl RunManifest {
    pub fn pending(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.content_hash(),
            config: cfg.clone(),
            started_at: now(),
            finished_at: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: RunStatus::Pending,
            steps: None,
            message: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.to_string(),
        })
    }

    fn finish(&mut self, status: RunStatus, steps: Option<u64>, message: Option<String>) {
        self.finished_at = Some(now());
        self.status = status;
        self.steps = steps;
        self.message = message;
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RunResult {
    Train {
        outcome: RunOutcome,
        final_record: Option<crate::metrics::MetricRecord>,
        grok: GrokSummary,
    },
    Theory(Vec<GridRow>),
}

/// Default output directory for a config without `out_dir`.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let name = match cfg.experiment {
        Experiment::Grok => "grok",
        Experiment::Warmstart => "warmstart",
        Experiment::Theory => "theory",
    };
    PathBuf::from("runs").join(format!("{name}-seed{}", cfg.seed))
}

/// Observer that logs to disk and keeps the last record.
struct DiskSink {
    writer: LogWriter,
    records: Vec<crate::metrics::MetricRecord>,
}

impl Observer for DiskSink {
    fn record(&mut self, record: &crate::metrics::MetricRecord) -> Result<()> {
        self.writer.write(record)?;
        self.records.push(record.clone());
        Ok(())
    }
}

/// Runs `cfg` with all artifacts written under `out`: the resolved config,
/// a manifest (pending until the run ends), metric logs or the theory table,
/// and the final parameters.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<RunResult> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
    let mut manifest = RunManifest::pending(cfg);
    manifest.write(out)?;

    let result = match cfg.experiment {
        Experiment::Theory => run_theory(cfg, out),
        _ => run_training(cfg, out),
    };
    match &result {
        Ok(RunResult::Train { outcome, .. }) => manifest.finish(RunStatus::Completed, Some(outcome.steps), None),
        Ok(RunResult::Theory(_)) => manifest.finish(RunStatus::Completed, None, None),
        Err(e @ Error::NonFinite { step, .. }) => manifest.finish(RunStatus::Diverged, Some(*step), Some(e.to_string())),
        Err(e) => manifest.finish(RunStatus::Failed, None, Some(e.to_string())),
    }
    manifest.write(out)?;
    result
}

fn run_theory(cfg: &RunConfig, out: &Path) -> Result<RunResult> {
    let rows = validate_grid(&cfg.theory_grid())?;
    write_theory_table(&out.join(THEORY_FILE), &rows)?;
    Ok(RunResult::Theory(rows))
}

pub fn write_theory_table(path: &Path, rows: &[GridRow]) -> Result<()> {
    let log_err = |e: csv::Error| Error::Log {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(log_err)?;
    w.write_record(["quantity", "lr", "sigma_g", "alpha", "closed_form", "mc_mean", "mc_se", "pass"])
        .map_err(log_err)?;
    for r in rows {
        w.write_record([
            format!("{:?}", r.quantity).to_lowercase(),
            r.lr.to_string(),
            r.sigma_g.to_string(),
            r.alpha.to_string(),
            format!("{:?}", r.closed_form),
            format!("{:?}", r.mc_mean),
            format!("{:?}", r.mc_se),
            r.pass.to_string(),
        ])
        .map_err(log_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn run_training(cfg: &RunConfig, out: &Path) -> Result<RunResult> {
    let data = build_data(cfg)?;
    let model = cfg.model();
    let schema = LogSchema::for_model(&model, &model.init_params(cfg.seed)?);
    let mut sink = DiskSink {
        writer: LogWriter::create(out, schema)?,
        records: Vec::new(),
    };
    let outcome = train_loop(cfg, &data, &mut sink)?;
    write_params(&out.join(PARAMS_FILE), &outcome.params)?;
    let grok = grok_step_summary(&sink.records)?;
    Ok(RunResult::Train {
        outcome,
        final_record: sink.records.pop(),
        grok,
    })
}

/// Parameters as a JSON object of `{role, shape, data}` entries.
pub fn write_params(path: &Path, params: &Parameters) -> Result<()> {
    let obj: serde_json::Map<String, serde_json::Value> = params
        .iter()
        .map(|(name, p)| {
            (
                name.to_string(),
                serde_json::json!({
                    "role": p.role,
                    "shape": p.tensor.shape(),
                    "data": p.tensor.data(),
                }),
            )
        })
        .collect();
    let text = serde_json::to_string(&obj).expect("parameters serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Final test accuracy and phase budget of a finished warm-start run directory.
pub fn arm_result(dir: &Path) -> Result<ArmResult> {
    let manifest = RunManifest::read(dir)?;
    let cfg = &manifest.config;
    if cfg.experiment != Experiment::Warmstart {
        return Err(Error::Config(format!("{} is not a warm-start run", dir.display())));
    }
    let (_, records) = read_csv_log(&dir.join(CSV_FILE))?;
    let last = records.last().ok_or_else(|| Error::Format {
        path: dir.join(CSV_FILE),
        reason: "log has no records".into(),
    })?;
    Ok(ArmResult {
        label: dir.display().to_string(),
        final_test_acc: last.test_acc,
        budget: (cfg.phase_epochs * cfg.num_classes * cfg.samples_per_class) as u64,
    })
}
