//! The online learning-rate search controller.
//!
//! The controller watches windowed loss-descent velocity and maintains a
//! scale factor applied on top of the base schedule. When the velocity decays
//! below a threshold it probes a larger rate: the rate is ramped up over one
//! window, held for one validation window, and the validation velocity is
//! compared against the historical window with the closest mean loss. The
//! probe is kept, reverted, or reverted-and-downscaled; rejected probes roll
//! the training state back to the pre-probe checkpoint when backtracking is
//! enabled. A boundary rule downscales directly when the loss rises for two
//! consecutive windows.
//!
//! Scaling factors decay toward 1 with the number of completed adjustments
//! and are floored at 1, so late adjustments are milder than early ones.

use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::slope::{fit_descent_velocity, LossWindow, SlopeEstimate};

/// Search hyperparameters.
///
/// `upscale_factor` and `downscale_factor` must be multiplicatively
/// independent (no small-integer power relation), which guarantees composed
/// adjustments can approximate any positive ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaLrsConfig {
    /// Trial upscale factor, > 1.
    pub upscale_factor: f64,
    /// Downscale factor, > 1 (the rate is divided by its rectified value).
    pub downscale_factor: f64,
    /// Per-adjustment decay applied to both factors, in (0, 1).
    pub decay_factor: f64,
    /// Velocity window length in steps.
    pub window_len: usize,
    /// Initial velocity-decay trigger threshold, in (0, 1).
    pub initial_threshold: f64,
    /// Search window start, as a fraction of total steps.
    pub search_start_ratio: f64,
    /// Search window end, as a fraction of total steps.
    pub search_end_ratio: f64,
    /// Multiplier on the OLS slope standard error when forming the dead band.
    pub error_multiplier: f64,
    /// Restore training state when a trial is rejected.
    pub backtracking: bool,
    /// Largest relative mean-loss gap at which a historical window still
    /// counts as comparable.
    pub comparable_gap_threshold: f64,
}

impl Default for AdaLrsConfig {
    fn default() -> Self {
        AdaLrsConfig {
            upscale_factor: 3.0,
            downscale_factor: 2.0,
            decay_factor: 0.99,
            window_len: 1000,
            initial_threshold: 0.9,
            search_start_ratio: 0.1,
            search_end_ratio: 0.4,
            error_multiplier: 3.0,
            backtracking: true,
            comparable_gap_threshold: 0.1,
        }
    }
}

/// Exponent bound for the multiplicative-independence check.
const INDEPENDENCE_MAX_POWER: i32 = 16;
const INDEPENDENCE_REL_TOL: f64 = 1e-9;

impl AdaLrsConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |msg: String| Err(ControllerError::InvalidConfig(msg));
        if !(self.upscale_factor > 1.0 && self.upscale_factor.is_finite()) {
            return bad(format!("upscale factor must be > 1, got {}", self.upscale_factor));
        }
        if !(self.downscale_factor > 1.0 && self.downscale_factor.is_finite()) {
            return bad(format!(
                "downscale factor must be > 1, got {}",
                self.downscale_factor
            ));
        }
        if self.upscale_factor == self.downscale_factor {
            return bad("upscale and downscale factors must differ".into());
        }
        if let Some((m, n)) = power_relation(self.upscale_factor, self.downscale_factor) {
            return bad(format!(
                "factors are multiplicatively dependent: {}^{} == {}^{}",
                self.upscale_factor, m, self.downscale_factor, n
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay factor must be in (0, 1), got {}", self.decay_factor));
        }
        if self.window_len < 2 {
            return bad(format!("window length must be >= 2, got {}", self.window_len));
        }
        if !(self.initial_threshold > 0.0 && self.initial_threshold < 1.0) {
            return bad(format!(
                "initial threshold must be in (0, 1), got {}",
                self.initial_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.search_start_ratio)
            || !(0.0..=1.0).contains(&self.search_end_ratio)
            || self.search_start_ratio >= self.search_end_ratio
        {
            return bad(format!(
                "search ratios must satisfy 0 <= start < end <= 1, got [{}, {}]",
                self.search_start_ratio, self.search_end_ratio
            ));
        }
        if !(self.error_multiplier > 0.0) {
            return bad(format!(
                "error multiplier must be positive, got {}",
                self.error_multiplier
            ));
        }
        if !(self.comparable_gap_threshold > 0.0) {
            return bad(format!(
                "comparable gap threshold must be positive, got {}",
                self.comparable_gap_threshold
            ));
        }
        Ok(())
    }
}

/// Detects an exact small-integer power relation a^m == b^n (within rounding).
fn power_relation(a: f64, b: f64) -> Option<(i32, i32)> {
    for m in 1..=INDEPENDENCE_MAX_POWER {
        let am = a.powi(m);
        for n in 1..=INDEPENDENCE_MAX_POWER {
            let bn = b.powi(n);
            if ((am - bn) / bn).abs() < INDEPENDENCE_REL_TOL {
                return Some((m, n));
            }
        }
    }
    None
}

/// Scaling factors decayed by the number of completed adjustments and
/// floored at 1. Returns `(upscale, downscale_divisor)`: the rate is
/// multiplied by the first on a kept upscale and divided by the second on a
/// downscale.
pub fn rectified_factors(cfg: &AdaLrsConfig, adjustment_count: u32) -> (f64, f64) {
    let decay = cfg.decay_factor.powi(adjustment_count as i32);
    (
        (decay * cfg.upscale_factor).max(1.0),
        (decay * cfg.downscale_factor).max(1.0),
    )
}

/// Rate multiplier reached `progress` steps into a trial ramp of `window_len`
/// steps: geometric interpolation from `scale` to `scale * upscale`.
pub fn ramp_multiplier_at(scale: f64, upscale: f64, progress: usize, window_len: usize) -> f64 {
    scale * upscale.powf(progress as f64 / window_len as f64)
}

/// What kind of adjustment a decision produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjustmentKind {
    /// Trial succeeded; the upscaled rate is kept.
    UpscaleKept,
    /// Trial failed; state restored and the rate downscaled.
    UpscaleRevertedThenDownscale,
    /// Trial inconclusive; state restored, rate unchanged.
    RevertOnly,
    /// Loss rose for two consecutive windows; immediate downscale.
    BoundaryDownscale,
}

/// One completed adjustment decision, as logged to the event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentEvent {
    pub step: u64,
    pub kind: AdjustmentKind,
    pub old_scale: f64,
    pub new_scale: f64,
    pub v_before: f64,
    pub v_after: Option<f64>,
}

/// Outcome of a validation comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    KeepUpscale,
    RevertAndDownscale,
    RevertOnly,
}

/// Three-way decision after the validation window.
///
/// With a comparable reference the new velocity must clear the reference by
/// more than `2 * error_bound` to keep the upscale, and fall short by more
/// than the same margin to downscale; anything in the dead band only reverts.
/// Without a reference the validation mean is compared against the extremes
/// of the historical window means: strictly below all of them keeps the
/// upscale, strictly above all of them downscales.
pub fn decide_after_validation(
    v_new: f64,
    reference_velocity: Option<f64>,
    error_bound: f64,
    new_mean: f64,
    history_extremes: (f64, f64),
) -> Decision {
    match reference_velocity {
        Some(v_ref) => {
            if v_new > v_ref + 2.0 * error_bound {
                Decision::KeepUpscale
            } else if v_new < v_ref - 2.0 * error_bound {
                Decision::RevertAndDownscale
            } else {
                Decision::RevertOnly
            }
        }
        None => {
            let (min_mean, max_mean) = history_extremes;
            if new_mean < min_mean {
                Decision::KeepUpscale
            } else if new_mean > max_mean {
                Decision::RevertAndDownscale
            } else {
                Decision::RevertOnly
            }
        }
    }
}

/// Loss history accumulated between adjustments.
///
/// Windows are contiguous, so the concatenated entries form one unbroken
/// `(step, loss)` run; comparable-reference lookups scan every length-k
/// sub-window of that run with stride 1.
#[derive(Clone, Debug)]
pub struct LossHistory {
    window_len: usize,
    entries: Vec<(u64, f64)>,
    velocities: Vec<f64>,
    max_loss: f64,
}

impl LossHistory {
    pub fn new(window_len: usize) -> Self {
        LossHistory {
            window_len,
            entries: Vec::new(),
            velocities: Vec::new(),
            max_loss: f64::NEG_INFINITY,
        }
    }

    pub fn push_window(&mut self, window: &LossWindow, fit: &SlopeEstimate) {
        debug_assert_eq!(window.len(), self.window_len);
        self.entries.extend_from_slice(window.entries());
        self.velocities.push(fit.velocity);
        self.max_loss = self.max_loss.max(window.max_loss());
    }

    pub fn window_count(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocity(&self, window_index: usize) -> f64 {
        self.velocities[window_index]
    }

    /// Largest loss seen in the history; `-inf` when empty.
    pub fn max_loss(&self) -> f64 {
        self.max_loss
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.velocities.clear();
        self.max_loss = f64::NEG_INFINITY;
    }

    fn sub_window_means(&self) -> Vec<f64> {
        // Summed per window rather than via prefix sums: losses can span
        // hundreds of orders of magnitude, and differencing running sums
        // cancels catastrophically.
        let k = self.window_len;
        if self.entries.len() < k {
            return Vec::new();
        }
        (0..=self.entries.len() - k)
            .map(|start| {
                let sum: f64 = self.entries[start..start + k].iter().map(|&(_, l)| l).sum();
                sum / k as f64
            })
            .collect()
    }

    /// Minimum and maximum over all stride-1 sub-window means, when at least
    /// one full window exists.
    pub fn sub_window_mean_extremes(&self) -> Option<(f64, f64)> {
        let means = self.sub_window_means();
        if means.is_empty() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in means {
            lo = lo.min(m);
            hi = hi.max(m);
        }
        Some((lo, hi))
    }

    /// The historical sub-window whose mean is closest to `new_mean`, ties
    /// broken toward the most recent. Returns `None` when the history is too
    /// short or the smallest relative gap exceeds `gap_threshold`.
    pub fn find_reference(&self, new_mean: f64, gap_threshold: f64) -> Option<LossWindow> {
        let means = self.sub_window_means();
        if means.is_empty() {
            return None;
        }
        let mut best_start = 0usize;
        let mut best_gap = f64::INFINITY;
        for (start, m) in means.iter().enumerate() {
            let gap = (m - new_mean).abs();
            if gap <= best_gap {
                best_gap = gap;
                best_start = start;
            }
        }
        let relative_gap = if best_gap == 0.0 {
            0.0
        } else if new_mean == 0.0 {
            f64::INFINITY
        } else {
            best_gap / new_mean.abs()
        };
        if relative_gap > gap_threshold {
            return None;
        }
        let slice = self.entries[best_start..best_start + self.window_len].to_vec();
        Some(LossWindow::new(slice).expect("history slices are valid windows"))
    }
}

/// Controller phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Collecting monitoring windows and checking triggers.
    Monitoring,
    /// Ramping the rate up toward the trial multiplier.
    UpscaleRamp,
    /// Holding the trial multiplier while collecting the validation window.
    Validating,
}

/// What the caller must do after feeding one observation.
#[derive(Debug)]
pub enum Action<C> {
    /// Nothing to do.
    Continue,
    /// A trial upscale begins at the next step. When backtracking is enabled
    /// the caller must snapshot the oracle now and pass the checkpoint to
    /// [`Controller::attach_checkpoint`].
    BeginTrialUpscale { step: u64, trigger_velocity: f64 },
    /// An adjustment decision completed. When `restore` carries a checkpoint
    /// the caller must roll the oracle back to it before the next step.
    Adjusted {
        event: AdjustmentEvent,
        restore: Option<C>,
    },
}

/// The search state machine. Generic over the checkpoint type `C`, which the
/// controller stores but never inspects; checkpoints are self-contained
/// values and may cross threads.
pub struct Controller<C> {
    cfg: AdaLrsConfig,
    search_start: u64,
    search_end: u64,
    phase: Phase,
    scale: f64,
    adjustment_count: u32,
    threshold: f64,
    pending: Vec<(u64, f64)>,
    history: LossHistory,
    checkpoint: Option<C>,
    ramp_done: usize,
    trial_scale: f64,
    trial_trigger_velocity: f64,
    validation: Vec<(u64, f64)>,
    last_step: Option<u64>,
}

impl<C> Controller<C> {
    /// Builds a controller for a run of `total_steps`, resolving the search
    /// window from the configured ratios once up front.
    pub fn new(cfg: AdaLrsConfig, total_steps: u64) -> Result<Self, ControllerError> {
        cfg.validate()?;
        let search_start = (cfg.search_start_ratio * total_steps as f64).floor() as u64;
        let search_end = (cfg.search_end_ratio * total_steps as f64).floor() as u64;
        let threshold = cfg.initial_threshold;
        let history = LossHistory::new(cfg.window_len);
        Ok(Controller {
            cfg,
            search_start,
            search_end,
            phase: Phase::Monitoring,
            scale: 1.0,
            adjustment_count: 0,
            threshold,
            pending: Vec::new(),
            history,
            checkpoint: None,
            ramp_done: 0,
            trial_scale: 1.0,
            trial_trigger_velocity: 0.0,
            validation: Vec::new(),
            last_step: None,
        })
    }

    pub fn config(&self) -> &AdaLrsConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Current persistent scale factor (excludes any in-flight trial).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn adjustment_count(&self) -> u32 {
        self.adjustment_count
    }

    pub fn trigger_threshold(&self) -> f64 {
        self.threshold
    }

    pub fn search_window(&self) -> (u64, u64) {
        (self.search_start, self.search_end)
    }

    /// Multiplier to apply to the base rate for the next step.
    pub fn lr_multiplier(&self) -> f64 {
        match self.phase {
            Phase::Monitoring => self.scale,
            Phase::UpscaleRamp => {
                let (up, _) = rectified_factors(&self.cfg, self.adjustment_count);
                ramp_multiplier_at(self.scale, up, self.ramp_done + 1, self.cfg.window_len)
            }
            Phase::Validating => self.trial_scale,
        }
    }

    /// Effective rate for the next step: base rate times the current multiplier.
    pub fn effective_lr(&self, base_lr: f64) -> f64 {
        base_lr * self.lr_multiplier()
    }

    /// Multiplier reached so far in the ramp; an error outside the ramp phase.
    pub fn ramp_multiplier(&self) -> Result<f64, ControllerError> {
        if self.phase != Phase::UpscaleRamp {
            return Err(ControllerError::NotInRamp);
        }
        let (up, _) = rectified_factors(&self.cfg, self.adjustment_count);
        Ok(ramp_multiplier_at(
            self.scale,
            up,
            self.ramp_done,
            self.cfg.window_len,
        ))
    }

    /// Hands the controller the checkpoint taken at the start of a trial.
    pub fn attach_checkpoint(&mut self, checkpoint: C) {
        debug_assert!(
            self.phase != Phase::Monitoring,
            "checkpoints are only held during a trial"
        );
        self.checkpoint = Some(checkpoint);
    }

    pub fn has_checkpoint(&self) -> bool {
        self.checkpoint.is_some()
    }

    fn reset_monitoring(&mut self) {
        self.history.clear();
        self.pending.clear();
        self.threshold = self.cfg.initial_threshold;
        self.phase = Phase::Monitoring;
    }

    /// Feeds the loss observed at `step` (taken at the multiplier this
    /// controller reported before the step) and advances the state machine.
    pub fn observe(&mut self, step: u64, loss: f64) -> Result<Action<C>, ControllerError> {
        if !loss.is_finite() {
            return Err(ControllerError::NonFiniteLoss(step));
        }
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(ControllerError::NonMonotonicStep(step));
            }
        }
        self.last_step = Some(step);

        match self.phase {
            Phase::Monitoring => self.observe_monitoring(step, loss),
            Phase::UpscaleRamp => {
                self.observe_ramp(loss);
                Ok(Action::Continue)
            }
            Phase::Validating => self.observe_validation(step, loss),
        }
    }

    fn observe_monitoring(&mut self, step: u64, loss: f64) -> Result<Action<C>, ControllerError> {
        let k = self.cfg.window_len;
        if step < self.search_start || step >= self.search_end {
            return Ok(Action::Continue);
        }
        self.pending.push((step, loss));
        if self.pending.len() < k {
            return Ok(Action::Continue);
        }

        let window = LossWindow::new(std::mem::take(&mut self.pending))?;
        let fit = fit_descent_velocity(&window, self.cfg.error_multiplier)?;
        let v_now = fit.velocity;
        self.history.push_window(&window, &fit);

        let windows = self.history.window_count();
        if windows < 2 {
            return Ok(Action::Continue);
        }
        let v_prev = self.history.velocity(windows - 2);

        // A trial costs one ramp window plus one validation window; only
        // start it if the decision lands inside the search window.
        let trial_fits = step + 2 * (k as u64) < self.search_end;
        if trial_fits && v_now < v_prev * self.threshold {
            self.phase = Phase::UpscaleRamp;
            self.ramp_done = 0;
            self.trial_trigger_velocity = v_now;
            self.validation.clear();
            Ok(Action::BeginTrialUpscale {
                step,
                trigger_velocity: v_now,
            })
        } else if v_now < 0.0 && v_prev < 0.0 {
            // Loss rose for two consecutive windows: downscale on the spot.
            let (_, down) = rectified_factors(&self.cfg, self.adjustment_count);
            let old_scale = self.scale;
            self.scale /= down;
            let event = AdjustmentEvent {
                step,
                kind: AdjustmentKind::BoundaryDownscale,
                old_scale,
                new_scale: self.scale,
                v_before: v_prev,
                v_after: Some(v_now),
            };
            self.adjustment_count += 1;
            self.reset_monitoring();
            Ok(Action::Adjusted {
                event,
                restore: None,
            })
        } else {
            self.threshold = (self.threshold + 1.0) / 2.0;
            Ok(Action::Continue)
        }
    }

    fn observe_ramp(&mut self, loss: f64) {
        let k = self.cfg.window_len;
        let (up, _) = rectified_factors(&self.cfg, self.adjustment_count);
        if loss > self.history.max_loss() {
            // Loss climbed above everything in the history: stop the ramp at
            // the multiplier reached and validate there.
            self.trial_scale = ramp_multiplier_at(self.scale, up, self.ramp_done + 1, k);
            self.phase = Phase::Validating;
            self.validation.clear();
            return;
        }
        self.ramp_done += 1;
        if self.ramp_done == k {
            self.trial_scale = self.scale * up;
            self.phase = Phase::Validating;
            self.validation.clear();
        }
    }

    fn observe_validation(&mut self, step: u64, loss: f64) -> Result<Action<C>, ControllerError> {
        let k = self.cfg.window_len;
        self.validation.push((step, loss));
        if self.validation.len() < k {
            return Ok(Action::Continue);
        }

        let new_window = LossWindow::new(std::mem::take(&mut self.validation))?;
        let new_fit = fit_descent_velocity(&new_window, self.cfg.error_multiplier)?;
        let new_mean = new_window.mean();

        let reference = self
            .history
            .find_reference(new_mean, self.cfg.comparable_gap_threshold);
        let (reference_velocity, error_bound) = match &reference {
            Some(window) => {
                // Re-fit from stored losses so both sides share estimator settings.
                let ref_fit = fit_descent_velocity(window, self.cfg.error_multiplier)?;
                (Some(ref_fit.velocity), new_fit.e_bound.max(ref_fit.e_bound))
            }
            None => (None, new_fit.e_bound),
        };
        let extremes = self
            .history
            .sub_window_mean_extremes()
            .expect("history holds at least two windows during a trial");

        let decision = decide_after_validation(
            new_fit.velocity,
            reference_velocity,
            error_bound,
            new_mean,
            extremes,
        );
        log::debug!(
            "decision at step {step}: v_new {:e}, reference {:?}, error bound {:e}, \
             validation mean {:e}, history extremes ({:e}, {:e}) -> {:?}",
            new_fit.velocity,
            reference_velocity,
            error_bound,
            new_mean,
            extremes.0,
            extremes.1,
            decision
        );
        let (up, down) = rectified_factors(&self.cfg, self.adjustment_count);
        let old_scale = self.scale;
        let (kind, restore) = match decision {
            Decision::KeepUpscale => {
                self.scale = old_scale * up;
                self.checkpoint = None;
                (AdjustmentKind::UpscaleKept, None)
            }
            Decision::RevertAndDownscale => {
                self.scale = old_scale / down;
                (
                    AdjustmentKind::UpscaleRevertedThenDownscale,
                    self.checkpoint.take(),
                )
            }
            Decision::RevertOnly => (AdjustmentKind::RevertOnly, self.checkpoint.take()),
        };
        let event = AdjustmentEvent {
            step,
            kind,
            old_scale,
            new_scale: self.scale,
            v_before: self.trial_trigger_velocity,
            v_after: Some(new_fit.velocity),
        };
        self.adjustment_count += 1;
        self.reset_monitoring();
        Ok(Action::Adjusted { event, restore })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k: usize) -> AdaLrsConfig {
        AdaLrsConfig {
            window_len: k,
            search_start_ratio: 0.0,
            search_end_ratio: 1.0,
            ..AdaLrsConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        AdaLrsConfig::default().validate().unwrap();
    }

    #[test]
    fn dependent_factors_are_rejected() {
        let mut c = cfg(10);
        c.upscale_factor = 4.0;
        c.downscale_factor = 2.0; // 4^1 == 2^2
        assert!(c.validate().is_err());
        c.upscale_factor = 2.25;
        c.downscale_factor = 1.5; // 2.25^1 == 1.5^2
        assert!(c.validate().is_err());
        c.upscale_factor = 3.0;
        c.downscale_factor = 3.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn independent_factor_pairs_pass() {
        for (a, b) in [(3.0, 2.0), (2.0, 1.67), (1.5, 1.43)] {
            let mut c = cfg(10);
            c.upscale_factor = a;
            c.downscale_factor = b;
            c.validate().unwrap_or_else(|e| panic!("({a}, {b}): {e}"));
        }
    }

    #[test]
    fn rectified_factors_match_direct_evaluation() {
        let mut c = cfg(10);
        c.upscale_factor = 3.0;
        c.downscale_factor = 2.0;
        c.decay_factor = 0.99;
        assert_eq!(rectified_factors(&c, 0), (3.0, 2.0));

        // 0.99^111 * 3 < 1, so the upscale factor is floored at 1.
        let (up, _) = rectified_factors(&c, 111);
        assert_eq!(up, 1.0);
        // Direct evaluation puts the first floored count at 110.
        let raw = |n: i32| 0.99f64.powi(n) * 3.0;
        assert!(raw(109) > 1.0 && raw(110) < 1.0);
        let (up110, _) = rectified_factors(&c, 110);
        assert_eq!(up110, 1.0);
        let (up109, _) = rectified_factors(&c, 109);
        assert!(up109 > 1.0);

        c.upscale_factor = 2.0;
        c.downscale_factor = 1.67;
        c.decay_factor = 0.9;
        let (up, down) = rectified_factors(&c, 3);
        assert!((up - 1.458).abs() < 1e-12);
        assert!((down - 1.21743).abs() < 1e-10);
    }

    #[test]
    fn ramp_multiplier_interpolates_geometrically() {
        assert_eq!(ramp_multiplier_at(1.0, 3.0, 0, 100), 1.0);
        assert_eq!(ramp_multiplier_at(1.0, 3.0, 100, 100), 3.0);
        let mid = ramp_multiplier_at(1.0, 3.0, 50, 100);
        assert!((mid - 3.0f64.sqrt()).abs() < 1e-12, "mid {mid}");
    }

    #[test]
    fn decision_branch_examples() {
        let e = 0.001;
        let extremes = (1.0, 2.0);
        assert_eq!(
            decide_after_validation(0.01 + 3.0 * e, Some(0.01), e, 1.5, extremes),
            Decision::KeepUpscale
        );
        assert_eq!(
            decide_after_validation(0.01 - 3.0 * e, Some(0.01), e, 1.5, extremes),
            Decision::RevertAndDownscale
        );
        assert_eq!(
            decide_after_validation(0.01 + e, Some(0.01), e, 1.5, extremes),
            Decision::RevertOnly
        );
    }

    #[test]
    fn decision_corner_cases_without_reference() {
        let extremes = (1.0, 2.0);
        assert_eq!(
            decide_after_validation(0.0, None, 0.0, 0.5, extremes),
            Decision::KeepUpscale
        );
        assert_eq!(
            decide_after_validation(0.0, None, 0.0, 2.5, extremes),
            Decision::RevertAndDownscale
        );
        assert_eq!(
            decide_after_validation(0.0, None, 0.0, 1.5, extremes),
            Decision::RevertOnly
        );
        // Boundary equality is not strictly below, so it only reverts.
        assert_eq!(
            decide_after_validation(0.0, None, 0.0, 1.0, extremes),
            Decision::RevertOnly
        );
    }

    #[test]
    fn find_reference_prefers_closest_then_most_recent() {
        // Window length 1 keeps the sub-window means equal to the raw values.
        let mut h = LossHistory::new(1);
        for (i, m) in [2.0, 1.5, 1.25].iter().enumerate() {
            let w = LossWindow::new(vec![(i as u64, *m)]).unwrap();
            h.push_window(&w, &SlopeEstimate { velocity: 0.0, residual_std: 0.0, e_bound: 0.0 });
        }
        let found = h.find_reference(1.4, 10.0).unwrap();
        assert_eq!(found.entries()[0].1, 1.5);
        // Exact tie between 1.5 and 1.25 (all values and gaps representable):
        // the most recent wins.
        let found = h.find_reference(1.375, 10.0).unwrap();
        assert_eq!(found.entries()[0].1, 1.25);
    }

    #[test]
    fn find_reference_respects_gap_threshold() {
        let mut h = LossHistory::new(1);
        for (i, m) in [2.0, 2.5, 3.0].iter().enumerate() {
            let w = LossWindow::new(vec![(i as u64, *m)]).unwrap();
            h.push_window(&w, &SlopeEstimate { velocity: 0.0, residual_std: 0.0, e_bound: 0.0 });
        }
        // Relative gap |2.0 - 0.5| / 0.5 = 3.0 > 0.5.
        assert!(h.find_reference(0.5, 0.5).is_none());
        assert!(h.find_reference(0.5, 3.1).is_some());
    }

    #[test]
    fn find_reference_scans_stride_one_blends() {
        // Two windows of length 2: [4, 4] then [2, 2]. The stride-1 blend
        // [4, 2] has mean 3, which is closest to 2.9.
        let mut h = LossHistory::new(2);
        let w1 = LossWindow::new(vec![(0, 4.0), (1, 4.0)]).unwrap();
        let w2 = LossWindow::new(vec![(2, 2.0), (3, 2.0)]).unwrap();
        let est = SlopeEstimate { velocity: 0.0, residual_std: 0.0, e_bound: 0.0 };
        h.push_window(&w1, &est);
        h.push_window(&w2, &est);
        let found = h.find_reference(2.9, 10.0).unwrap();
        assert_eq!(found.entries(), &[(1, 4.0), (2, 2.0)]);
        let (lo, hi) = h.sub_window_mean_extremes().unwrap();
        assert_eq!((lo, hi), (2.0, 4.0));
    }

    /// Scripted run: descending losses whose velocity halves each window,
    /// then a validation window that descends much faster.
    #[test]
    fn trial_lifecycle_keeps_a_successful_upscale() {
        let k = 10usize;
        let mut c = cfg(k);
        c.initial_threshold = 0.9;
        c.comparable_gap_threshold = 1e9;
        let mut ctrl: Controller<()> = Controller::new(c.clone(), 1000).unwrap();

        let mut step = 0u64;
        let mut loss = 100.0;
        // Window 1: slope 1.0 per step; window 2: slope 0.2 (decayed velocity).
        let mut trial_started = false;
        for _ in 0..k {
            loss -= 1.0;
            assert!(matches!(ctrl.observe(step, loss).unwrap(), Action::Continue));
            step += 1;
        }
        for i in 0..k {
            loss -= 0.2;
            let action = ctrl.observe(step, loss).unwrap();
            step += 1;
            if i == k - 1 {
                match action {
                    Action::BeginTrialUpscale { trigger_velocity, .. } => {
                        trial_started = true;
                        assert!((trigger_velocity - 0.2).abs() < 1e-9);
                    }
                    other => panic!("expected trial, got {other:?}"),
                }
            }
        }
        assert!(trial_started);
        assert_eq!(ctrl.phase(), Phase::UpscaleRamp);
        ctrl.attach_checkpoint(());

        // Ramp: keep descending gently (never above max history).
        for _ in 0..k {
            loss -= 0.1;
            ctrl.observe(step, loss).unwrap();
            step += 1;
        }
        assert_eq!(ctrl.phase(), Phase::Validating);
        let (up, _) = rectified_factors(&c, 0);
        assert!((ctrl.lr_multiplier() - up).abs() < 1e-12);

        // Validation: fast descent, velocity 3.0 per step.
        let mut adjusted = None;
        for _ in 0..k {
            loss -= 3.0;
            if let Action::Adjusted { event, restore } = ctrl.observe(step, loss).unwrap() {
                assert!(restore.is_none(), "kept upscale must not restore");
                adjusted = Some(event);
            }
            step += 1;
        }
        let event = adjusted.expect("decision after validation window");
        assert_eq!(event.kind, AdjustmentKind::UpscaleKept);
        assert_eq!(event.old_scale, 1.0);
        assert!((event.new_scale - up).abs() < 1e-12);
        assert_eq!(ctrl.adjustment_count(), 1);
        assert_eq!(ctrl.phase(), Phase::Monitoring);
        assert!(!ctrl.has_checkpoint());
        // History and threshold reset after the adjustment.
        assert_eq!(ctrl.trigger_threshold(), c.initial_threshold);
    }

    #[test]
    fn boundary_downscale_fires_on_two_rising_windows() {
        let k = 10usize;
        let mut ctrl: Controller<()> = Controller::new(cfg(k), 1000).unwrap();
        let mut step = 0u64;
        let mut loss = 1.0;
        let mut event = None;
        // Rising loss: velocity negative in both windows. The upscale trigger
        // condition v2 < theta * v1 is false because v2 > v1 here
        // (-0.1 > -0.2 * 0.9), so the boundary rule fires.
        for _ in 0..k {
            loss += 0.2;
            ctrl.observe(step, loss).unwrap();
            step += 1;
        }
        for _ in 0..k {
            loss += 0.1;
            if let Action::Adjusted { event: e, restore } = ctrl.observe(step, loss).unwrap() {
                assert!(restore.is_none());
                event = Some(e);
            }
            step += 1;
        }
        let e = event.expect("boundary downscale");
        assert_eq!(e.kind, AdjustmentKind::BoundaryDownscale);
        assert!((e.new_scale - 0.5).abs() < 1e-12);
        assert_eq!(ctrl.adjustment_count(), 1);
    }

    #[test]
    fn threshold_anneals_toward_one_and_resets() {
        let k = 4usize;
        let mut c = cfg(k);
        c.initial_threshold = 0.5;
        let mut ctrl: Controller<()> = Controller::new(c, 10_000).unwrap();
        let mut step = 0u64;
        // Constant-velocity descent never triggers (v stays equal, threshold < 1).
        let mut last_threshold = ctrl.trigger_threshold();
        let mut loss = 1000.0;
        for w in 0..6 {
            for _ in 0..k {
                loss -= 1.0;
                assert!(matches!(ctrl.observe(step, loss).unwrap(), Action::Continue));
                step += 1;
            }
            let th = ctrl.trigger_threshold();
            if w >= 1 {
                assert!(th > last_threshold, "threshold must anneal toward 1");
                assert!(th < 1.0);
            }
            last_threshold = th;
        }
    }

    #[test]
    fn no_trigger_outside_search_window() {
        let k = 5usize;
        let mut c = cfg(k);
        c.search_start_ratio = 0.5;
        c.search_end_ratio = 0.6;
        let mut ctrl: Controller<()> = Controller::new(c, 100).unwrap();
        // Steps 0..50 are ignored entirely.
        let mut loss = 100.0;
        for step in 0..50u64 {
            loss -= 1.0;
            assert!(matches!(ctrl.observe(step, loss).unwrap(), Action::Continue));
        }
        assert_eq!(ctrl.phase(), Phase::Monitoring);
        assert_eq!(ctrl.search_window(), (50, 60));
        // Inside the window only two 5-step windows fit; a trial would need
        // 10 more steps, which do not fit before step 60, so nothing fires.
        for step in 50..100u64 {
            loss -= 1.0;
            assert!(matches!(ctrl.observe(step, loss).unwrap(), Action::Continue));
        }
        assert_eq!(ctrl.adjustment_count(), 0);
    }

    #[test]
    fn early_stop_holds_ramp_multiplier() {
        let k = 10usize;
        let mut c = cfg(k);
        c.comparable_gap_threshold = 1e9;
        let mut ctrl: Controller<()> = Controller::new(c, 1000).unwrap();
        let mut step = 0u64;
        let mut loss = 100.0;
        for _ in 0..k {
            loss -= 1.0;
            ctrl.observe(step, loss).unwrap();
            step += 1;
        }
        for _ in 0..k {
            loss -= 0.1;
            ctrl.observe(step, loss).unwrap();
            step += 1;
        }
        assert_eq!(ctrl.phase(), Phase::UpscaleRamp);
        // Third ramp step spikes above the history maximum (100 - 1 = 99 max... use 200).
        for i in 0..3 {
            let l = if i == 2 { 200.0 } else { loss - 0.01 };
            ctrl.observe(step, l).unwrap();
            step += 1;
        }
        assert_eq!(ctrl.phase(), Phase::Validating);
        let held = ctrl.lr_multiplier();
        let full = rectified_factors(ctrl.config(), 0).0;
        assert!(held < full, "early stop must hold below the full factor");
        assert!(held > 1.0);
    }

    #[test]
    fn non_monotonic_steps_are_rejected() {
        let mut ctrl: Controller<()> = Controller::new(cfg(5), 100).unwrap();
        ctrl.observe(3, 1.0).unwrap();
        assert_eq!(
            ctrl.observe(3, 1.0).unwrap_err(),
            ControllerError::NonMonotonicStep(3)
        );
        assert_eq!(
            ctrl.observe(7, f64::INFINITY).unwrap_err(),
            ControllerError::NonFiniteLoss(7)
        );
    }

    proptest! {
        /// Swapping the two velocities swaps keep and downscale; the dead
        /// band maps to itself.
        #[test]
        fn decision_is_antisymmetric(
            v_new in -1.0f64..1.0,
            v_ref in -1.0f64..1.0,
            e in 0.0f64..0.5,
        ) {
            let d1 = decide_after_validation(v_new, Some(v_ref), e, 1.0, (0.0, 2.0));
            let d2 = decide_after_validation(v_ref, Some(v_new), e, 1.0, (0.0, 2.0));
            let expected = match d1 {
                Decision::KeepUpscale => Decision::RevertAndDownscale,
                Decision::RevertAndDownscale => Decision::KeepUpscale,
                Decision::RevertOnly => Decision::RevertOnly,
            };
            prop_assert_eq!(d2, expected);
        }

        /// Monotone safety: when the true velocity gain clears the dead band
        /// with room for both estimate errors (gap > 4e), bounded estimate
        /// noise cannot flip the keep decision. Conversely a keep decision
        /// always implies a true gain.
        #[test]
        fn bounded_noise_keeps_clear_upscales(
            eta in 1e-4f64..1e-2,
            gain_over_4e in 1e-6f64..1.0,
            e in 0.0f64..0.1,
            d1 in -1.0f64..1.0,
            d2 in -1.0f64..1.0,
        ) {
            // Synthetic true velocities with V(up * eta) - V(eta) > 4e.
            let v_true_ref = eta;
            let v_true_new = eta + 4.0 * e + gain_over_4e;
            let v_ref = v_true_ref + d2 * e;
            let v_new = v_true_new + d1 * e;
            let d = decide_after_validation(v_new, Some(v_ref), e, 1.0, (0.0, 2.0));
            prop_assert_eq!(d, Decision::KeepUpscale);
        }

        #[test]
        fn keep_decision_implies_true_gain(
            v_true_new in -1.0f64..1.0,
            v_true_ref in -1.0f64..1.0,
            e in 1e-6f64..0.1,
            d1 in -1.0f64..1.0,
            d2 in -1.0f64..1.0,
        ) {
            let v_new = v_true_new + d1 * e;
            let v_ref = v_true_ref + d2 * e;
            if decide_after_validation(v_new, Some(v_ref), e, 1.0, (0.0, 2.0))
                == Decision::KeepUpscale
            {
                prop_assert!(v_true_new > v_true_ref);
            }
        }
    }
}
