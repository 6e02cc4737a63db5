//! Experiment runner: wires scheduler, controller, and oracle together,
//! logs traces and events, and provides grid pilots, convexity sweeps, and
//! run comparison.

mod config;
mod report;

pub use config::{AnyOracle, OracleConfig, OracleKind, RawConfig, RunConfig};
pub use report::{
    load_run_artifacts, trace_from_csv, trace_to_csv, write_run_artifacts, RunReport, TraceRow,
    EVENTS_FILE, REPORT_FILE, TRACE_FILE,
};

use std::path::Path;
use std::time::Instant;

use log::{debug, info};

use crate::controller::{Action, AdjustmentEvent, Controller};
use crate::error::{HarnessError, OracleError};
use crate::oracle::{grid_search, GridOutcome, MlpCheckpoint, Oracle, QuadraticCheckpoint};
use crate::sched::base_lr_at;
use crate::slope::{fit_descent_velocity, LossWindow};
use crate::theory::{
    convergence_band, lr_transitions, measure_gamma, outside_neighborhood, ConvergenceVerdict,
};

/// Checkpoint for whichever oracle a run uses.
#[derive(Clone)]
pub enum AnyCheckpoint {
    Quadratic(QuadraticCheckpoint),
    Mlp(MlpCheckpoint),
}

impl Oracle for AnyOracle {
    type Checkpoint = AnyCheckpoint;

    fn step(&mut self, lr: f64) -> Result<f64, OracleError> {
        match self {
            AnyOracle::Quadratic(o) => o.step(lr),
            AnyOracle::Mlp(o) => o.step(lr),
        }
    }

    fn snapshot(&self) -> AnyCheckpoint {
        match self {
            AnyOracle::Quadratic(o) => AnyCheckpoint::Quadratic(o.snapshot()),
            AnyOracle::Mlp(o) => AnyCheckpoint::Mlp(o.snapshot()),
        }
    }

    fn restore(&mut self, checkpoint: &AnyCheckpoint) {
        match (self, checkpoint) {
            (AnyOracle::Quadratic(o), AnyCheckpoint::Quadratic(c)) => o.restore(c),
            (AnyOracle::Mlp(o), AnyCheckpoint::Mlp(c)) => o.restore(c),
            _ => unreachable!("checkpoint kind matches the oracle that produced it"),
        }
    }
}

/// Window used for `final_loss` when no search window length is configured.
const DEFAULT_FINAL_WINDOW: usize = 200;

/// Radius (as a fraction of the optimum) of the neighborhood excluded from
/// the gamma estimate: adjustments starting inside it are terminal
/// oscillation, not approach.
const GAMMA_NEIGHBORHOOD_RATIO: f64 = 0.5;

/// Executes one run. When `output_dir` is given, writes `trace.csv`,
/// `events.json`, and `report.json` into it; identical configs and seeds
/// produce byte-identical trace files.
pub fn run_experiment(
    cfg: &RunConfig,
    output_dir: Option<&Path>,
) -> Result<RunReport, HarnessError> {
    cfg.scheduler.validate()?;
    let started = Instant::now();
    let total_steps = cfg.scheduler.total_steps;
    let mut oracle = cfg.oracle.build(cfg.seed)?;
    let mut controller: Option<Controller<AnyCheckpoint>> = match &cfg.adalrs {
        Some(acfg) => Some(Controller::new(acfg.clone(), total_steps)?),
        None => None,
    };
    info!(
        "run: seed {} oracle {:?} scheduler {:?} search {}",
        cfg.seed,
        cfg.oracle.kind,
        cfg.scheduler.kind,
        controller.is_some()
    );

    let mut trace = Vec::with_capacity(total_steps as usize);
    let mut events: Vec<AdjustmentEvent> = Vec::new();
    let mut diverged = false;
    let mut diverged_at_step = None;

    for t in 0..total_steps {
        let base_lr = base_lr_at(&cfg.scheduler, t)?;
        let scale = controller.as_ref().map_or(1.0, |c| c.lr_multiplier());
        let effective_lr = base_lr * scale;
        let loss = match oracle.step(effective_lr) {
            Ok(loss) => loss,
            Err(OracleError::Diverged { loss }) => {
                info!("diverged at step {t} with loss {loss:e}");
                diverged = true;
                diverged_at_step = Some(t);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        trace.push(TraceRow {
            step: t,
            base_lr,
            scale,
            effective_lr,
            loss,
        });
        if let Some(ctrl) = controller.as_mut() {
            match ctrl.observe(t, loss)? {
                Action::Continue => {}
                Action::BeginTrialUpscale {
                    step,
                    trigger_velocity,
                } => {
                    debug!("trial upscale at step {step}, trigger velocity {trigger_velocity:e}");
                    if ctrl.config().backtracking {
                        let checkpoint = oracle.snapshot();
                        ctrl.attach_checkpoint(checkpoint);
                    }
                }
                Action::Adjusted { event, restore } => {
                    info!(
                        "adjustment at step {}: {:?} scale {:e} -> {:e}",
                        event.step, event.kind, event.old_scale, event.new_scale
                    );
                    if let Some(checkpoint) = restore {
                        oracle.restore(&checkpoint);
                    }
                    events.push(event);
                }
            }
        }
    }

    let final_window_len = cfg
        .adalrs
        .as_ref()
        .map(|a| a.window_len)
        .unwrap_or(DEFAULT_FINAL_WINDOW)
        .min(trace.len().max(1));
    let tail = &trace[trace.len().saturating_sub(final_window_len)..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    };
    let final_scale = controller.as_ref().map_or(1.0, |c| c.scale());
    let adjustment_count = controller.as_ref().map_or(0, |c| c.adjustment_count());

    let verdict = match (&cfg.adalrs, cfg.eta_star) {
        (Some(acfg), Some(eta_star)) => {
            let last_step = trace.last().map_or(0, |r| r.step);
            let final_scale_lr = base_lr_at(&cfg.scheduler, last_step)? * final_scale;
            let mut verdict: ConvergenceVerdict =
                convergence_band(final_scale_lr, adjustment_count, acfg, eta_star, cfg.band_slack)
                    .map_err(|e| HarnessError::config("eta_star", e.to_string()))?;
            let transitions = lr_transitions(&events, |step| {
                base_lr_at(&cfg.scheduler, step).unwrap_or(cfg.scheduler.base_lr)
            });
            let approach = outside_neighborhood(
                &transitions,
                eta_star,
                GAMMA_NEIGHBORHOOD_RATIO * eta_star,
            );
            verdict.gamma_estimate = measure_gamma(&approach, eta_star).ok();
            Some(verdict)
        }
        _ => None,
    };

    let report = RunReport {
        config: cfg.clone(),
        executed_steps: trace.len() as u64,
        trace,
        events,
        final_loss,
        final_window_len,
        final_scale,
        adjustment_count,
        verdict,
        diverged,
        diverged_at_step,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = output_dir {
        write_run_artifacts(&report, dir)?;
    }
    Ok(report)
}

/// Outcome of comparing a run against a baseline.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RunComparison {
    pub final_loss_a: f64,
    pub final_loss_b: f64,
    pub final_loss_delta: f64,
    /// First step at which run A's trailing mean drops below run B's final
    /// loss; `None` when it never does.
    pub crossing_step: Option<u64>,
    /// Crossing step as a fraction of run B's length.
    pub crossing_fraction: Option<f64>,
}

/// Compares two runs of the same oracle config and seed: the final-loss gap
/// and the step at which `a` first beats `b`'s final loss.
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunComparison, HarnessError> {
    if a.config.oracle != b.config.oracle || a.config.seed != b.config.seed {
        return Err(HarnessError::Mismatch(
            "runs must share the oracle config and seed".into(),
        ));
    }
    let target = b.final_loss;
    let mut crossing_step = None;
    for (row, mean) in a.trace.iter().zip(a.trailing_mean_losses()) {
        if mean < target {
            crossing_step = Some(row.step);
            break;
        }
    }
    // Identical runs cross exactly at the last step: the trailing means are
    // equal and the final mean is not strictly below itself, so fall back to
    // the final step when the traces match bit for bit.
    if crossing_step.is_none() && a.executed_steps == b.executed_steps {
        let identical = a
            .trace
            .iter()
            .zip(&b.trace)
            .all(|(x, y)| x.loss.to_bits() == y.loss.to_bits());
        if identical {
            crossing_step = a.trace.last().map(|r| r.step);
        }
    }
    let denom = b.executed_steps.max(1) as f64;
    Ok(RunComparison {
        final_loss_a: a.final_loss,
        final_loss_b: b.final_loss,
        final_loss_delta: a.final_loss - b.final_loss,
        crossing_step,
        crossing_fraction: crossing_step.map(|s| s as f64 / denom),
    })
}

/// Loss and velocity structure across a constant-rate grid.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SweepTable {
    pub lr_grid: Vec<f64>,
    pub snapshots: Vec<u64>,
    /// `losses[lr][snapshot]`: trailing-window mean at the snapshot step;
    /// absent where the run diverged before reaching it.
    pub losses: Vec<Vec<Option<f64>>>,
    /// Final trailing-window mean per rate.
    pub final_losses: Vec<Option<f64>>,
    /// Loss levels at which velocities are matched, high to low.
    pub loss_levels: Vec<f64>,
    /// `velocities[lr][level]`: descent velocity where the run first reached
    /// the level; absent when it never did.
    pub velocities: Vec<Vec<Option<f64>>>,
}

impl SweepTable {
    pub fn loss_argmin_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, l) in self.final_losses.iter().enumerate() {
            if let Some(l) = l {
                if best.map_or(true, |(_, b)| *l < b) {
                    best = Some((i, *l));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Per-level argmax of velocity over rates, reduced to the median index.
    pub fn velocity_argmax_index(&self) -> Option<usize> {
        let mut argmaxes = Vec::new();
        for level_idx in 0..self.loss_levels.len() {
            let mut best: Option<(usize, f64)> = None;
            let mut present = 0;
            for (lr_idx, per_level) in self.velocities.iter().enumerate() {
                if let Some(v) = per_level[level_idx] {
                    present += 1;
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((lr_idx, v));
                    }
                }
            }
            // A level only one run reaches carries no comparison.
            if present >= 2 {
                if let Some((i, _)) = best {
                    argmaxes.push(i);
                }
            }
        }
        if argmaxes.is_empty() {
            return None;
        }
        argmaxes.sort_unstable();
        Some(argmaxes[(argmaxes.len() - 1) / 2])
    }

    /// Unimodality with one-notch tolerance: the curve (absent entries count
    /// as infinitely bad) must be non-increasing then non-decreasing, either
    /// as-is or after deleting a single point.
    pub fn final_loss_is_unimodal(&self) -> bool {
        let values: Vec<f64> = self
            .final_losses
            .iter()
            .map(|l| l.unwrap_or(f64::INFINITY))
            .collect();
        if exactly_unimodal(&values) {
            return true;
        }
        (0..values.len()).any(|skip| {
            let reduced: Vec<f64> = values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| *v)
                .collect();
            exactly_unimodal(&reduced)
        })
    }

    /// Two-column blocks per snapshot / level, gnuplot-ready.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("lr");
        for s in &self.snapshots {
            out.push_str(&format!(",loss_at_{s}"));
        }
        out.push_str(",final_loss\n");
        for (i, &lr) in self.lr_grid.iter().enumerate() {
            out.push_str(&format!("{lr:e}"));
            for v in &self.losses[i] {
                match v {
                    Some(v) => out.push_str(&format!(",{v:e}")),
                    None => out.push_str(","),
                }
            }
            match self.final_losses[i] {
                Some(v) => out.push_str(&format!(",{v:e}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn velocity_csv(&self) -> String {
        let mut out = String::from("lr");
        for (i, _) in self.loss_levels.iter().enumerate() {
            out.push_str(&format!(",velocity_at_level_{i}"));
        }
        out.push('\n');
        out.push_str("# levels:");
        for l in &self.loss_levels {
            out.push_str(&format!(" {l:e}"));
        }
        out.push('\n');
        for (i, &lr) in self.lr_grid.iter().enumerate() {
            out.push_str(&format!("{lr:e}"));
            for v in &self.velocities[i] {
                match v {
                    Some(v) => out.push_str(&format!(",{v:e}")),
                    None => out.push_str(","),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn exactly_unimodal(values: &[f64]) -> bool {
    // Non-increasing prefix followed by a non-decreasing suffix; equivalent
    // to at most one sign change (down to up) in the discrete differences.
    let mut rising = false;
    for pair in values.windows(2) {
        if pair[1] > pair[0] {
            rising = true;
        } else if pair[1] < pair[0] && rising {
            return false;
        }
    }
    true
}

/// One independent constant-rate run per grid point: trailing-mean losses at
/// each snapshot step plus descent velocities matched by loss level.
pub fn convexity_sweep(
    oracle: &OracleConfig,
    seed: u64,
    lr_grid: &[f64],
    steps: u64,
    snapshots: &[u64],
    velocity_window: usize,
) -> Result<SweepTable, HarnessError> {
    if lr_grid.is_empty() {
        return Err(OracleError::EmptyGrid.into());
    }
    let velocity_window = velocity_window.max(2);

    // Collect every run's raw losses (up to divergence).
    let mut runs: Vec<Vec<f64>> = Vec::with_capacity(lr_grid.len());
    for &lr in lr_grid {
        let mut o = oracle.build(seed)?;
        let mut losses = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            match o.step(lr) {
                Ok(l) => losses.push(l),
                Err(OracleError::Diverged { .. }) => break,
                Err(e) => return Err(e.into()),
            }
        }
        runs.push(losses);
    }

    // Direct per-window sums; a running sum cancels catastrophically when
    // the loss spans many orders of magnitude.
    let smooth = |losses: &[f64]| -> Vec<f64> {
        (0..losses.len())
            .map(|i| {
                let start = (i + 1).saturating_sub(velocity_window);
                let slice = &losses[start..=i];
                slice.iter().sum::<f64>() / slice.len() as f64
            })
            .collect()
    };
    let smoothed: Vec<Vec<f64>> = runs.iter().map(|r| smooth(r)).collect();

    // Snapshot losses.
    let mut losses = Vec::with_capacity(lr_grid.len());
    for s in &smoothed {
        let row: Vec<Option<f64>> = snapshots
            .iter()
            .map(|&snap| s.get(snap as usize).copied())
            .collect();
        losses.push(row);
    }
    let final_losses: Vec<Option<f64>> = smoothed
        .iter()
        .zip(&runs)
        .map(|(s, r)| {
            // A run that diverged before the horizon has no final loss.
            if (r.len() as u64) < steps {
                None
            } else {
                s.last().copied()
            }
        })
        .collect();

    // Matched loss levels: geometric grid from just under the shared initial
    // loss down to just above the best final loss.
    let initial = smoothed
        .iter()
        .filter_map(|s| s.first())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let best_final = final_losses
        .iter()
        .flatten()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let loss_levels = geometric_levels(initial, best_final, 8);

    let mut velocities = Vec::with_capacity(lr_grid.len());
    for (s, r) in smoothed.iter().zip(&runs) {
        let mut per_level = Vec::with_capacity(loss_levels.len());
        for &level in &loss_levels {
            per_level.push(velocity_at_level(r, s, level, velocity_window));
        }
        velocities.push(per_level);
    }

    Ok(SweepTable {
        lr_grid: lr_grid.to_vec(),
        snapshots: snapshots.to_vec(),
        losses,
        final_losses,
        loss_levels,
        velocities,
    })
}

fn geometric_levels(top: f64, bottom: f64, count: usize) -> Vec<f64> {
    if !(top.is_finite() && bottom.is_finite()) || top <= 0.0 || bottom <= 0.0 || bottom >= top {
        return Vec::new();
    }
    let hi = top * 0.9;
    let lo = (bottom * 1.5).min(hi);
    if lo >= hi {
        return vec![hi];
    }
    let ratio = (lo / hi).powf(1.0 / (count.saturating_sub(1)).max(1) as f64);
    (0..count).map(|i| hi * ratio.powi(i as i32)).collect()
}

/// Descent velocity over the trailing window ending where the smoothed loss
/// first reaches `level`.
fn velocity_at_level(
    losses: &[f64],
    smoothed: &[f64],
    level: f64,
    window: usize,
) -> Option<f64> {
    let hit = smoothed.iter().position(|&m| m <= level)?;
    if hit + 1 < window {
        return None;
    }
    let start = hit + 1 - window;
    let slice = &losses[start..=hit];
    let w = LossWindow::from_series(start as u64, slice).ok()?;
    fit_descent_velocity(&w, 1.0).ok().map(|e| e.velocity)
}

/// Brute-force optimum: grid search scored by full-run mean loss.
pub fn brute_force_optimal_lr(
    oracle: &OracleConfig,
    seed: u64,
    lr_grid: &[f64],
    steps: u64,
) -> Result<GridOutcome, HarnessError> {
    Ok(grid_search(
        || oracle.build(seed).expect("oracle config validated"),
        lr_grid,
        steps,
        steps,
    )?)
}
