//! Synthetic trainable problems with exact snapshot/restore.
//!
//! An oracle stands in for a pretraining run at desk scale: it exposes one
//! optimizer step per call, reports the loss at the visited point (before the
//! update), and can capture its complete mutable state — parameters,
//! optimizer auxiliaries, and RNG — as a checkpoint. Restoring a checkpoint
//! and replaying the same rates reproduces losses bit for bit.

mod grid;
mod mlp;
mod quadratic;

pub use grid::{grid_search, GridOutcome};
pub use mlp::{MlpCheckpoint, MlpOracle};
pub use quadratic::{NoiseMode, QuadraticCheckpoint, QuadraticOracle};

use crate::error::OracleError;

/// Loss blowing up past this multiple of the initial loss counts as
/// divergence, alongside any non-finite loss.
pub const DIVERGENCE_RATIO: f64 = 1e12;

/// A trainable problem driven one optimizer step at a time.
pub trait Oracle {
    /// Self-contained snapshot of all mutable state.
    type Checkpoint: Clone + Send;

    /// Runs one optimizer update at learning rate `lr` and returns the loss
    /// evaluated before the update. Divergence is an error, not a panic.
    fn step(&mut self, lr: f64) -> Result<f64, OracleError>;

    /// Captures parameters, optimizer auxiliaries, and RNG state.
    fn snapshot(&self) -> Self::Checkpoint;

    /// Rolls all mutable state back to `checkpoint`.
    fn restore(&mut self, checkpoint: &Self::Checkpoint);
}

/// Plain SGD or heavy-ball momentum, shared by the oracles.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
}

pub(crate) fn check_divergence(loss: f64, initial_loss: f64) -> Result<(), OracleError> {
    if !loss.is_finite() || loss > DIVERGENCE_RATIO * initial_loss.max(f64::MIN_POSITIVE) {
        return Err(OracleError::Diverged { loss });
    }
    Ok(())
}
