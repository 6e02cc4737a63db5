//! Base learning-rate schedulers.
//!
//! These produce the underlying learning rate that the search controller
//! multiplies by its scale factor. All schedules are pure functions of
//! `(config, step)`, so concurrent runs can share a config freely.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::SchedError;

/// Which base schedule shape to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Flat at `base_lr` for the whole run.
    Constant,
    /// Half-cosine from `base_lr` down to `min_lr_ratio * base_lr`.
    Cosine,
    /// Constant at `base_lr`, then linear decay to `min_lr_ratio * base_lr`
    /// over the final `wsd_decay_fraction` of the run.
    Wsd,
}

/// Base scheduler configuration.
///
/// The floor is parameterized as a ratio of `base_lr` so that multiplying the
/// schedule by an external scale factor preserves its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Peak learning rate.
    pub base_lr: f64,
    /// Horizon in optimizer steps.
    pub total_steps: u64,
    /// Floor as a fraction of `base_lr`, in `[0, 1)`.
    pub min_lr_ratio: f64,
    /// Fraction of the horizon spent in the final linear decay (WSD only),
    /// in `(0, 1)`.
    pub wsd_decay_fraction: f64,
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, base_lr: f64, total_steps: u64) -> Self {
        ScheduleConfig {
            kind,
            base_lr,
            total_steps,
            min_lr_ratio: 0.0,
            wsd_decay_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(SchedError::InvalidConfig(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.total_steps == 0 {
            return Err(SchedError::InvalidConfig(
                "total_steps must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_lr_ratio) {
            return Err(SchedError::InvalidConfig(format!(
                "min_lr_ratio must be in [0, 1), got {}",
                self.min_lr_ratio
            )));
        }
        if !(self.wsd_decay_fraction > 0.0 && self.wsd_decay_fraction < 1.0) {
            return Err(SchedError::InvalidConfig(format!(
                "wsd_decay_fraction must be in (0, 1), got {}",
                self.wsd_decay_fraction
            )));
        }
        Ok(())
    }
}

/// Learning rate of the base schedule at step `t`.
///
/// Valid for `0 <= t <= total_steps`; deterministic and referentially
/// transparent, so repeated calls with equal inputs are bit-identical.
pub fn base_lr_at(cfg: &ScheduleConfig, t: u64) -> Result<f64, SchedError> {
    cfg.validate()?;
    if t > cfg.total_steps {
        return Err(SchedError::StepOutOfRange {
            step: t,
            total_steps: cfg.total_steps,
        });
    }
    let min_lr = cfg.base_lr * cfg.min_lr_ratio;
    let lr = match cfg.kind {
        ScheduleKind::Constant => cfg.base_lr,
        ScheduleKind::Cosine => {
            let progress = t as f64 / cfg.total_steps as f64;
            min_lr + 0.5 * (cfg.base_lr - min_lr) * (1.0 + (PI * progress).cos())
        }
        ScheduleKind::Wsd => {
            let total = cfg.total_steps as f64;
            let decay_start = (1.0 - cfg.wsd_decay_fraction) * total;
            let t = t as f64;
            if t < decay_start {
                cfg.base_lr
            } else {
                let progress = (t - decay_start) / (total - decay_start);
                cfg.base_lr + (min_lr - cfg.base_lr) * progress
            }
        }
    };
    debug_assert!(lr.is_finite(), "schedule produced a non-finite rate");
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cosine(base_lr: f64, total: u64, min_ratio: f64) -> ScheduleConfig {
        ScheduleConfig {
            kind: ScheduleKind::Cosine,
            base_lr,
            total_steps: total,
            min_lr_ratio: min_ratio,
            wsd_decay_fraction: 0.1,
        }
    }

    fn wsd(base_lr: f64, total: u64, min_ratio: f64, decay_fraction: f64) -> ScheduleConfig {
        ScheduleConfig {
            kind: ScheduleKind::Wsd,
            base_lr,
            total_steps: total,
            min_lr_ratio: min_ratio,
            wsd_decay_fraction: decay_fraction,
        }
    }

    #[test]
    fn constant_is_flat() {
        let cfg = ScheduleConfig::new(ScheduleKind::Constant, 2e-4, 1000);
        for t in [0, 1, 500, 1000] {
            assert_eq!(base_lr_at(&cfg, t).unwrap(), 2e-4);
        }
    }

    #[test]
    fn cosine_peak_at_start() {
        let cfg = cosine(2e-4, 10_000, 0.0);
        assert_eq!(base_lr_at(&cfg, 0).unwrap(), 2e-4);
    }

    #[test]
    fn cosine_midpoint_is_average_of_endpoints() {
        // Closed form: lr(T/2) = (base + min) / 2.
        let cfg = cosine(2e-4, 10_000, 0.0);
        let got = base_lr_at(&cfg, 5000).unwrap();
        let expected = (2e-4 + 0.0) / 2.0;
        assert!((got - expected).abs() / expected < 1e-12, "got {got}");
    }

    #[test]
    fn cosine_end_hits_floor() {
        let cfg = cosine(2e-4, 10_000, 0.1);
        let got = base_lr_at(&cfg, 10_000).unwrap();
        let expected = 2e-5;
        assert!((got - expected).abs() / expected < 1e-12, "got {got}");
    }

    #[test]
    fn wsd_linear_tail_midpoint() {
        // Halfway through the final 10%: lr = base/2 when the floor is 0.
        let cfg = wsd(2e-4, 10_000, 0.0, 0.1);
        let got = base_lr_at(&cfg, 9500).unwrap();
        let expected = 1e-4;
        assert!((got - expected).abs() / expected < 1e-12, "got {got}");
    }

    #[test]
    fn wsd_flat_until_decay_start_and_floor_at_end() {
        let cfg = wsd(2e-4, 10_000, 0.0, 0.1);
        assert_eq!(base_lr_at(&cfg, 0).unwrap(), 2e-4);
        assert_eq!(base_lr_at(&cfg, 8999).unwrap(), 2e-4);
        assert_eq!(base_lr_at(&cfg, 9000).unwrap(), 2e-4);
        assert_eq!(base_lr_at(&cfg, 10_000).unwrap(), 0.0);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let cfg = cosine(2e-4, 100, 0.0);
        assert_eq!(
            base_lr_at(&cfg, 101),
            Err(SchedError::StepOutOfRange {
                step: 101,
                total_steps: 100
            })
        );
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = cosine(0.0, 100, 0.0);
        assert!(base_lr_at(&cfg, 0).is_err());
        cfg.base_lr = 1e-3;
        cfg.min_lr_ratio = 1.0;
        assert!(base_lr_at(&cfg, 0).is_err());
        cfg.min_lr_ratio = 0.0;
        cfg.total_steps = 0;
        assert!(base_lr_at(&cfg, 0).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_monotone_non_increasing(
            base_lr in 1e-6f64..1.0,
            min_ratio in 0.0f64..0.99,
            total in 2u64..5000,
            split in 0.0f64..1.0,
        ) {
            let cfg = cosine(base_lr, total, min_ratio);
            let t1 = ((total as f64) * split) as u64;
            let t2 = (t1 + 1).min(total);
            let a = base_lr_at(&cfg, t1).unwrap();
            let b = base_lr_at(&cfg, t2).unwrap();
            prop_assert!(b <= a + 1e-18);
        }

        #[test]
        fn wsd_is_flat_then_affine(
            base_lr in 1e-6f64..1.0,
            min_ratio in 0.0f64..0.99,
            total in 10u64..5000,
            fraction in 0.05f64..0.95,
        ) {
            let cfg = wsd(base_lr, total, min_ratio, fraction);
            let decay_start = ((1.0 - fraction) * total as f64).ceil() as u64;
            // Flat segment.
            let mid_flat = decay_start / 2;
            prop_assert_eq!(base_lr_at(&cfg, mid_flat).unwrap(), base_lr);
            // Endpoint hits the floor exactly.
            let end = base_lr_at(&cfg, total).unwrap();
            prop_assert!((end - base_lr * min_ratio).abs() <= 1e-15 * base_lr);
            // Tail is non-increasing.
            if decay_start < total {
                let a = base_lr_at(&cfg, decay_start).unwrap();
                let b = base_lr_at(&cfg, total).unwrap();
                prop_assert!(b <= a);
            }
        }
    }
}
