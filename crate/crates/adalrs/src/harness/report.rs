//! Run artifacts: per-step trace, event log, and summary report.
//!
//! The trace CSV is the reproducibility surface: floats are written in
//! shortest round-trip scientific notation, so identical runs produce
//! byte-identical files and parsing a file reconstructs the in-memory trace
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::AdjustmentEvent;
use crate::error::HarnessError;
use crate::theory::ConvergenceVerdict;

use super::config::RunConfig;

pub const TRACE_HEADER: &str = "step,base_lr,scale,effective_lr,loss";
pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const REPORT_FILE: &str = "report.json";

/// One executed optimizer step. `scale` is the multiplier actually applied,
/// so `effective_lr == base_lr * scale` on every row, ramp steps included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub base_lr: f64,
    pub scale: f64,
    pub effective_lr: f64,
    pub loss: f64,
}

/// Everything a run produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    pub events: Vec<AdjustmentEvent>,
    /// Mean loss over the trailing window of `final_window_len` steps.
    pub final_loss: f64,
    pub final_window_len: usize,
    pub final_scale: f64,
    pub adjustment_count: u32,
    pub verdict: Option<ConvergenceVerdict>,
    pub diverged: bool,
    pub diverged_at_step: Option<u64>,
    pub executed_steps: u64,
    pub wall_time_secs: f64,
}

impl RunReport {
    /// Trailing-window mean losses: entry `t` averages the last
    /// `final_window_len` losses ending at step `t` (fewer near the start).
    /// Each window is summed directly; a running sum would cancel
    /// catastrophically on traces spanning many orders of magnitude.
    pub fn trailing_mean_losses(&self) -> Vec<f64> {
        let w = self.final_window_len.max(1);
        (0..self.trace.len())
            .map(|i| {
                let start = (i + 1).saturating_sub(w);
                let slice = &self.trace[start..=i];
                slice.iter().map(|r| r.loss).sum::<f64>() / slice.len() as f64
            })
            .collect()
    }
}

fn fmt_float(x: f64) -> String {
    // LowerExp gives the shortest digit string that parses back exactly.
    format!("{x:e}")
}

/// Serializes the trace in the fixed CSV schema.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(trace.len() * 48 + TRACE_HEADER.len() + 1);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.step,
            fmt_float(row.base_lr),
            fmt_float(row.scale),
            fmt_float(row.effective_lr),
            fmt_float(row.loss),
        );
    }
    out
}

/// Parses a trace CSV produced by [`trace_to_csv`].
pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>, HarnessError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == TRACE_HEADER => {}
        other => {
            return Err(HarnessError::Malformed {
                path: "<trace>".into(),
                message: format!("bad header {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields.next().ok_or_else(|| HarnessError::Malformed {
                path: "<trace>".into(),
                message: format!("row {}: missing {name}", i + 2),
            })
        };
        let step = next("step")?
            .parse()
            .map_err(|e| HarnessError::Malformed {
                path: "<trace>".into(),
                message: format!("row {}: {e}", i + 2),
            })?;
        let mut float = |name: &str| -> Result<f64, HarnessError> {
            next(name)?.parse().map_err(|e| HarnessError::Malformed {
                path: "<trace>".into(),
                message: format!("row {}: {e}", i + 2),
            })
        };
        rows.push(TraceRow {
            step,
            base_lr: float("base_lr")?,
            scale: float("scale")?,
            effective_lr: float("effective_lr")?,
            loss: float("loss")?,
        });
    }
    Ok(rows)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

fn read_file(dir: &Path, name: &str) -> Result<String, HarnessError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

/// Writes `trace.csv`, `events.json`, and `report.json` into `dir`.
pub fn write_run_artifacts(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir.display().to_string(), e))?;
    write_file(dir, TRACE_FILE, &trace_to_csv(&report.trace))?;
    let events = serde_json::to_string_pretty(&report.events).expect("events serialize");
    write_file(dir, EVENTS_FILE, &events)?;
    let summary = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(dir, REPORT_FILE, &summary)?;
    Ok(())
}

/// Loads a report written by [`write_run_artifacts`], reattaching the trace.
pub fn load_run_artifacts(dir: &Path) -> Result<RunReport, HarnessError> {
    let summary = read_file(dir, REPORT_FILE)?;
    let mut report: RunReport =
        serde_json::from_str(&summary).map_err(|e| HarnessError::Malformed {
            path: dir.join(REPORT_FILE).display().to_string(),
            message: e.to_string(),
        })?;
    report.trace = trace_from_csv(&read_file(dir, TRACE_FILE)?)?;
    Ok(report)
}
