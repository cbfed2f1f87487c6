use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricRecord;

/// Accuracy that counts as "reached" for both memorization and grokking.
pub const REACHED: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrokSummary {
    /// First logged step with test accuracy ≥ 0.99.
    pub grok_step: Option<u64>,
    /// First logged step with train accuracy ≥ 0.99.
    pub memorization_step: Option<u64>,
}

impl GrokSummary {
    /// Grok step minus memorization step, when both exist.
    pub fn gap(&self) -> Option<i64> {
        Some(self.grok_step? as i64 - self.memorization_step? as i64)
    }
}

fn show(v: Option<impl fmt::Display>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl fmt::Display for GrokSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grok_step={} memorization_step={} gap={}",
            show(self.grok_step),
            show(self.memorization_step),
            show(self.gap())
        )
    }
}

pub fn grok_step_summary(records: &[MetricRecord]) -> Result<GrokSummary> {
    for pair in records.windows(2) {
        if pair[1].step <= pair[0].step {
            return Err(Error::Contract(format!(
                "log steps are not increasing ({} then {})",
                pair[0].step, pair[1].step
            )));
        }
    }
    let first = |f: fn(&MetricRecord) -> f64| records.iter().find(|r| f(r) >= REACHED).map(|r| r.step);
    Ok(GrokSummary {
        grok_step: first(|r| r.test_acc),
        memorization_step: first(|r| r.train_acc),
    })
}

/// Final result of one warm-start arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub final_test_acc: f64,
    /// Samples presented in the final phase; arms are only comparable when
    /// these agree.
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmstartReport {
    pub fresh: f64,
    pub warm_constant: f64,
    pub warm_rewarm: f64,
    /// fresh − warm+constant
    pub gap_constant: f64,
    /// fresh − warm+re-warm
    pub gap_rewarm: f64,
    /// warm+re-warm − warm+constant
    pub rewarm_gain: f64,
    pub tolerance: f64,
    pub closed: bool,
}

impl fmt::Display for WarmstartReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "arm            final_test_acc  gap_to_fresh")?;
        writeln!(f, "fresh          {:<15.4} {:.4}", self.fresh, 0.0)?;
        writeln!(f, "warm+constant  {:<15.4} {:.4}", self.warm_constant, self.gap_constant)?;
        writeln!(f, "warm+rewarm    {:<15.4} {:.4}", self.warm_rewarm, self.gap_rewarm)?;
        write!(f, "closed (tolerance {}): {}", self.tolerance, self.closed)
    }
}

pub fn warmstart_report(
    fresh: &ArmResult,
    warm_constant: &ArmResult,
    warm_rewarm: &ArmResult,
    tolerance: f64,
) -> Result<WarmstartReport> {
    for arm in [warm_constant, warm_rewarm] {
        if arm.budget != fresh.budget {
            return Err(Error::Contract(format!(
                "budget mismatch: `{}` saw {} samples, `{}` saw {}",
                fresh.label, fresh.budget, arm.label, arm.budget
            )));
        }
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let gap_rewarm = fresh.final_test_acc - warm_rewarm.final_test_acc;
    Ok(WarmstartReport {
        fresh: fresh.final_test_acc,
        warm_constant: warm_constant.final_test_acc,
        warm_rewarm: warm_rewarm.final_test_acc,
        gap_constant: fresh.final_test_acc - warm_constant.final_test_acc,
        gap_rewarm,
        rewarm_gain: warm_rewarm.final_test_acc - warm_constant.final_test_acc,
        tolerance,
        closed: gap_rewarm <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(accs: &[(f64, f64)]) -> Vec<MetricRecord> {
        accs.iter()
            .enumerate()
            .map(|(i, &(train_acc, test_acc))| MetricRecord {
                step: i as u64 * 100,
                train_acc,
                test_acc,
                ..Default::default()
            })
            .collect()
    }

    #[test]
    fn never_reaching_gives_none() {
        let s = grok_step_summary(&log(&[(0.5, 0.1), (1.0, 0.3)])).unwrap();
        assert_eq!(s.grok_step, None);
        assert_eq!(s.memorization_step, Some(100));
        assert_eq!(s.gap(), None);
        assert_eq!(s.to_string(), "grok_step=none memorization_step=100 gap=none");
    }

    #[test]
    fn monotone_log_crossing_at_500() {
        let accs: Vec<(f64, f64)> = (0..10).map(|i| (1.0, i as f64 * 0.2)).collect();
        let s = grok_step_summary(&log(&accs)).unwrap();
        assert_eq!(s.grok_step, Some(500));
        assert_eq!(s.memorization_step, Some(0));
        assert_eq!(s.gap(), Some(500));
    }

    #[test]
    fn unordered_log_is_malformed() {
        let mut l = log(&[(0.0, 0.0), (0.0, 0.0)]);
        l[1].step = 0;
        assert!(grok_step_summary(&l).is_err());
    }

    fn arm(label: &str, acc: f64) -> ArmResult {
        ArmResult {
            label: label.into(),
            final_test_acc: acc,
            budget: 4000 * 70,
        }
    }

    #[test]
    fn identical_arms_have_zero_gaps() {
        let r = warmstart_report(&arm("a", 0.8), &arm("b", 0.8), &arm("c", 0.8), 0.01).unwrap();
        assert_eq!((r.gap_constant, r.gap_rewarm, r.rewarm_gain), (0.0, 0.0, 0.0));
        assert!(r.closed);
    }

    #[test]
    fn worked_example() {
        let r = warmstart_report(&arm("f", 0.90), &arm("c", 0.85), &arm("r", 0.895), 0.01).unwrap();
        assert!((r.gap_constant - 0.05).abs() < 1e-12);
        assert!((r.gap_rewarm - 0.005).abs() < 1e-12);
        assert!(r.closed);
        let open = warmstart_report(&arm("f", 0.90), &arm("c", 0.85), &arm("r", 0.87), 0.01).unwrap();
        assert!(!open.closed);
    }

    #[test]
    fn budget_mismatch_is_an_error() {
        let mut short = arm("c", 0.85);
        short.budget -= 1;
        assert!(warmstart_report(&arm("f", 0.9), &short, &arm("r", 0.9), 0.01).is_err());
    }
}
