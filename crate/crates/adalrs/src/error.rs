//! Error types shared across the crate.

use thiserror::Error;

/// Errors from base scheduler evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error("step {step} is outside [0, {total_steps}]")]
    StepOutOfRange { step: u64, total_steps: u64 },
}

/// Errors from loss-window construction and slope fitting.
#[derive(Debug, Error, PartialEq)]
pub enum SlopeError {
    #[error("loss window must not be empty")]
    EmptyWindow,
    #[error("slope fit needs at least 2 points, got {0}")]
    WindowTooShort(usize),
    #[error("window steps must be strictly increasing")]
    NonIncreasingSteps,
    #[error("loss at step {0} is not finite")]
    NonFiniteLoss(u64),
    #[error("step values have zero variance")]
    ZeroStepVariance,
}

/// Errors from the search controller.
#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss observed at step {0}")]
    NonFiniteLoss(u64),
    #[error("observe() called with non-increasing step {0}")]
    NonMonotonicStep(u64),
    #[error("ramp multiplier queried outside the upscale ramp")]
    NotInRamp,
    #[error(transparent)]
    Slope(#[from] SlopeError),
}

/// Errors from training oracles and grid search.
#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: loss {loss} exceeded the divergence bound")]
    Diverged { loss: f64 },
    #[error("learning-rate grid must not be empty")]
    EmptyGrid,
    #[error("all grid runs diverged; no optimum")]
    NoOptimum,
}

/// Errors from the executable theory checks.
#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("factors are not multiplicatively independent: {0}")]
    DependentFactors(String),
    #[error(
        "no exponent pair within tolerance {tolerance} up to max exponent {max_exponent}; \
         best was m={m}, n={n} with relative error {relative_error}"
    )]
    NotFound {
        tolerance: f64,
        max_exponent: u32,
        m: u32,
        n: u32,
        relative_error: f64,
    },
    #[error("need at least one adjustment transition")]
    InsufficientEvents,
    #[error("band is degenerate: optimum {eta_star} must exceed slack {slack}")]
    DegenerateBand { eta_star: f64, slack: f64 },
}

/// Errors from the experiment harness and CLI config handling.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
