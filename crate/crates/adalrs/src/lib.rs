//! Online optimal learning-rate search driven by loss-descent velocity.
//!
//! The search controller rides on top of a base scheduler: it watches the
//! windowed slope of the training loss, probes a larger rate when descent
//! slows, validates the probe against the historical window with the closest
//! mean loss, and keeps, reverts, or downscales accordingly. Rejected probes
//! roll the training state back to a checkpoint, so a failed experiment costs
//! steps but not model quality. Scaling factors decay toward 1 with each
//! adjustment, pinning the rate to a shrinking band around the optimum.
//!
//! The crate ships with:
//!
//! - [`sched`]: constant, cosine, and warmup-stable-decay base schedules;
//! - [`slope`]: windowed least-squares descent-velocity estimation with an
//!   explicit error bound;
//! - [`controller`]: the search state machine and its decision rule;
//! - [`oracle`]: synthetic trainable problems (quadratic bowl, small MLP)
//!   with bit-exact snapshot/restore and constant-rate grid search;
//! - [`theory`]: executable checks of the factor-density, geometric-decay,
//!   and terminal-band guarantees;
//! - [`harness`]: reproducible experiment runner, convexity sweeps, run
//!   comparison, and the flat-file config format behind the `adalrs` CLI.

pub mod controller;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod sched;
pub mod slope;
pub mod theory;

pub use controller::{
    decide_after_validation, rectified_factors, Action, AdaLrsConfig, AdjustmentEvent,
    AdjustmentKind, Controller, Decision, Phase,
};
pub use error::{ControllerError, HarnessError, OracleError, SchedError, SlopeError, TheoryError};
pub use harness::{
    compare_runs, convexity_sweep, run_experiment, OracleConfig, OracleKind, RawConfig,
    RunComparison, RunConfig, RunReport, SweepTable, TraceRow,
};
pub use oracle::{
    grid_search, GridOutcome, MlpOracle, NoiseMode, OptimizerKind, Oracle, QuadraticOracle,
};
pub use sched::{base_lr_at, ScheduleConfig, ScheduleKind};
pub use slope::{fit_descent_velocity, window_mean, LossWindow, SlopeEstimate};
pub use theory::{
    convergence_band, density_approximate, measure_gamma, ConvergenceVerdict, DensityResult,
};
