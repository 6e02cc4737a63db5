//! Executable checks of the search algorithm's mathematical guarantees:
//! density of composed scaling factors, per-adjustment geometric error decay,
//! and the terminal band around the optimal rate.

use serde::{Deserialize, Serialize};

use crate::controller::{rectified_factors, AdaLrsConfig, AdjustmentEvent};
use crate::error::TheoryError;

/// Best exponent pair found by [`density_approximate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityResult {
    pub m: u32,
    pub n: u32,
    /// `alpha^m / beta^n` as evaluated in double precision.
    pub achieved: f64,
    /// `|achieved - target| / target`.
    pub relative_error: f64,
}

/// Exhaustive search for `alpha^m / beta^n ~= target` over
/// `0 <= m, n <= max_exponent`, returning the pair with the smallest relative
/// error. Because the factors are multiplicatively independent the products
/// are dense in the positive reals, so raising `max_exponent` always succeeds
/// eventually; within a fixed box the result is certifiably minimal.
pub fn density_approximate(
    alpha: f64,
    beta: f64,
    target: f64,
    epsilon_rel: f64,
    max_exponent: u32,
) -> Result<DensityResult, TheoryError> {
    if !(alpha > 1.0 && beta > 1.0) {
        return Err(TheoryError::DependentFactors(format!(
            "factors must exceed 1, got {alpha} and {beta}"
        )));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(TheoryError::DependentFactors(format!(
            "target must be positive, got {target}"
        )));
    }

    let mut best = DensityResult {
        m: 0,
        n: 0,
        achieved: 1.0,
        relative_error: (1.0 - target).abs() / target,
    };
    for m in 0..=max_exponent {
        let am = alpha.powi(m as i32);
        for n in 0..=max_exponent {
            let achieved = am / beta.powi(n as i32);
            if !achieved.is_finite() || achieved == 0.0 {
                continue;
            }
            let relative_error = (achieved - target).abs() / target;
            if relative_error < best.relative_error {
                best = DensityResult {
                    m,
                    n,
                    achieved,
                    relative_error,
                };
            }
        }
    }
    if best.relative_error <= epsilon_rel {
        Ok(best)
    } else {
        Err(TheoryError::NotFound {
            tolerance: epsilon_rel,
            max_exponent,
            m: best.m,
            n: best.n,
            relative_error: best.relative_error,
        })
    }
}

/// One adjustment viewed as effective learning rates at a matched schedule
/// phase: the base rate at the event step times the old and new scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrTransition {
    pub before: f64,
    pub after: f64,
}

/// Builds transitions from the event log, evaluating the base schedule at
/// each event's step so both sides share the same schedule phase.
pub fn lr_transitions(
    events: &[AdjustmentEvent],
    base_lr_at_step: impl Fn(u64) -> f64,
) -> Vec<LrTransition> {
    events
        .iter()
        .map(|e| {
            let base = base_lr_at_step(e.step);
            LrTransition {
                before: e.old_scale * base,
                after: e.new_scale * base,
            }
        })
        .collect()
}

/// Keeps only transitions whose starting rate lies outside the
/// `neighborhood`-radius interval around `eta_star`; the decay guarantee
/// applies only there.
pub fn outside_neighborhood(
    transitions: &[LrTransition],
    eta_star: f64,
    neighborhood: f64,
) -> Vec<LrTransition> {
    transitions
        .iter()
        .copied()
        .filter(|t| (t.before - eta_star).abs() > neighborhood)
        .collect()
}

/// Worst-case per-adjustment contraction of the gap to the optimum:
/// `max |after - eta_star| / |before - eta_star|`. Values below 1 confirm
/// geometric decay; a value above 1 flags an adjustment that moved away.
pub fn measure_gamma(transitions: &[LrTransition], eta_star: f64) -> Result<f64, TheoryError> {
    if transitions.is_empty() {
        return Err(TheoryError::InsufficientEvents);
    }
    let mut worst: f64 = 0.0;
    for t in transitions {
        let before_gap = (t.before - eta_star).abs();
        let after_gap = (t.after - eta_star).abs();
        let ratio = if before_gap == 0.0 {
            if after_gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            after_gap / before_gap
        };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Verdict of the terminal band check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    /// Scale-adjusted rate at the end of the run, at a matched schedule phase.
    pub final_scale_lr: f64,
    pub eta_star: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub inside: bool,
    /// Worst-case contraction over adjustments outside the neighborhood;
    /// absent when no such adjustment happened.
    pub gamma_estimate: Option<f64>,
}

/// The band the final rate must land in: the `slack`-neighborhood of the
/// optimum widened by the rectified factors at the final adjustment count.
/// As the factors decay to 1 the band collapses onto the neighborhood itself.
pub fn convergence_band(
    final_scale_lr: f64,
    adjustment_count: u32,
    cfg: &AdaLrsConfig,
    eta_star: f64,
    slack: f64,
) -> Result<ConvergenceVerdict, TheoryError> {
    if eta_star <= slack {
        return Err(TheoryError::DegenerateBand { eta_star, slack });
    }
    let (up, down) = rectified_factors(cfg, adjustment_count);
    let band_lo = (eta_star - slack) / (up * down);
    let band_hi = (eta_star + slack) * up * down;
    Ok(ConvergenceVerdict {
        final_scale_lr,
        eta_star,
        band_lo,
        band_hi,
        inside: band_lo < final_scale_lr && final_scale_lr < band_hi,
        gamma_estimate: None,
    })
}
