//! Re-checks trace invariants in a result directory.

use std::path::Path;

use umf_core::TraceRecord;

use crate::output::{read_summary, read_traces};
use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub traces_checked: usize,
    pub records_checked: usize,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Violations within one trace: NFE and best-so-far must never decrease,
/// and best-so-far must be the running maximum of the rewards.
pub fn check_trace(trace: &[TraceRecord]) -> Vec<String> {
    let mut out = Vec::new();
    let mut running = f64::NEG_INFINITY;
    for (i, t) in trace.iter().enumerate() {
        running = running.max(t.reward);
        if t.best_so_far != running {
            out.push(format!("record {i}: best_so_far {} is not the running max {running}", t.best_so_far));
        }
        if t.nfe_consumed < t.nfe_before {
            out.push(format!("record {i}: nfe_consumed {} < nfe_before {}", t.nfe_consumed, t.nfe_before));
        }
        if let Some(prev) = i.checked_sub(1).map(|j| &trace[j]) {
            if t.nfe_consumed < prev.nfe_consumed {
                out.push(format!("record {i}: NFE went down from {} to {}", prev.nfe_consumed, t.nfe_consumed));
            }
            if t.best_so_far < prev.best_so_far {
                out.push(format!(
                    "record {i}: best-so-far fell from {} to {} at NFE {}",
                    prev.best_so_far, t.best_so_far, t.nfe_consumed
                ));
            }
        }
    }
    out
}

pub fn verify_dir(dir: &Path) -> Result<VerifyReport, CliError> {
    let rows = read_summary(dir)?;
    let traces = read_traces(dir)?;
    let mut report = VerifyReport::default();
    for (name, trace) in &traces {
        report.traces_checked += 1;
        report.records_checked += trace.len();
        report.violations.extend(check_trace(trace).into_iter().map(|v| format!("{name}: {v}")));
    }
    for r in rows.iter().filter(|r| r.status == "ok") {
        let name = format!("{}__{}__b{}__s{}", r.problem, r.method, r.budget, r.seed);
        let Some(trace) = traces.get(&name) else {
            report.violations.push(format!("{name}: summary row has no trace"));
            continue;
        };
        let last = trace.last().map(|t| t.best_so_far);
        if last != r.best_reward {
            report.violations.push(format!("{name}: summary best_reward {:?} != final best-so-far {last:?}", r.best_reward));
        }
        if let Some(t) = trace.last() {
            if t.nfe_consumed != r.nfe_consumed {
                report.violations.push(format!("{name}: summary nfe {} != final trace nfe {}", r.nfe_consumed, t.nfe_consumed));
            }
        }
    }
    Ok(report)
}
