//! Loss-descent velocity estimation over sliding windows.
//!
//! The velocity is the negated ordinary-least-squares slope of loss against
//! step index, so positive values mean the loss is going down. Each fit also
//! carries an error bound derived from the classical standard error of the
//! OLS slope, which downstream comparisons use as their dead band.

use serde::{Deserialize, Serialize};

use crate::error::SlopeError;

/// An ordered run of `(step, loss)` observations.
///
/// Steps are strictly increasing and every loss is finite; both are enforced
/// at construction so fits never see malformed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWindow {
    entries: Vec<(u64, f64)>,
}

impl LossWindow {
    pub fn new(entries: Vec<(u64, f64)>) -> Result<Self, SlopeError> {
        if entries.is_empty() {
            return Err(SlopeError::EmptyWindow);
        }
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(SlopeError::NonIncreasingSteps);
            }
        }
        if let Some(&(step, loss)) = entries.iter().find(|(_, l)| !l.is_finite()) {
            let _ = loss;
            return Err(SlopeError::NonFiniteLoss(step));
        }
        Ok(LossWindow { entries })
    }

    /// Window with unit step spacing starting at `start_step`.
    pub fn from_series(start_step: u64, losses: &[f64]) -> Result<Self, SlopeError> {
        Self::new(
            losses
                .iter()
                .enumerate()
                .map(|(i, &l)| (start_step + i as u64, l))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn first_step(&self) -> u64 {
        self.entries[0].0
    }

    pub fn last_step(&self) -> u64 {
        self.entries[self.entries.len() - 1].0
    }

    /// Arithmetic mean of the losses. The window is non-empty by construction.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.entries.iter().map(|&(_, l)| l).sum();
        sum / self.entries.len() as f64
    }

    pub fn max_loss(&self) -> f64 {
        self.entries.iter().map(|&(_, l)| l).fold(f64::MIN, f64::max)
    }
}

/// Result of a velocity fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    /// Descent velocity in loss units per step; positive when loss decreases.
    pub velocity: f64,
    /// Regression standard error of the fit residuals (zero on exact lines).
    pub residual_std: f64,
    /// `error_multiplier` times the standard error of the OLS slope; an
    /// estimate of how far `velocity` may sit from the true descent rate.
    pub e_bound: f64,
}

/// Least-squares fit of the descent velocity over a window.
///
/// Steps are re-centered before fitting to avoid cancellation at large step
/// indices. `residual_std` uses the regression denominator `k - 2`, and the
/// slope standard error is `residual_std / sqrt(sum (t - t_mean)^2)`.
pub fn fit_descent_velocity(
    window: &LossWindow,
    error_multiplier: f64,
) -> Result<SlopeEstimate, SlopeError> {
    let k = window.len();
    if k < 2 {
        return Err(SlopeError::WindowTooShort(k));
    }

    let entries = window.entries();
    let step_mean = entries.iter().map(|&(t, _)| t as f64).sum::<f64>() / k as f64;
    let loss_mean = window.mean();

    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(t, l) in entries {
        let x = t as f64 - step_mean;
        sxx += x * x;
        sxy += x * (l - loss_mean);
    }
    if sxx <= 0.0 {
        return Err(SlopeError::ZeroStepVariance);
    }

    let slope = sxy / sxx;
    // Residuals are normalized by their largest magnitude before squaring so
    // the sum of squares cannot overflow on very large losses.
    let residual = |t: u64, l: f64| (l - loss_mean) - slope * (t as f64 - step_mean);
    let r_max = entries
        .iter()
        .map(|&(t, l)| residual(t, l).abs())
        .fold(0.0f64, f64::max);
    let residual_std = if k > 2 && r_max > 0.0 {
        let normalized_ssr: f64 = entries
            .iter()
            .map(|&(t, l)| {
                let r = residual(t, l) / r_max;
                r * r
            })
            .sum();
        r_max * (normalized_ssr / (k - 2) as f64).sqrt()
    } else {
        0.0
    };
    let e_bound = error_multiplier * residual_std / sxx.sqrt();

    Ok(SlopeEstimate {
        velocity: -slope,
        residual_std,
        e_bound,
    })
}

/// Arithmetic mean of the window's losses.
pub fn window_mean(window: &LossWindow) -> f64 {
    window.mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(f: impl Fn(f64) -> f64, k: usize) -> LossWindow {
        LossWindow::from_series(0, &(0..k).map(|t| f(t as f64)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_windows() {
        assert_eq!(LossWindow::new(vec![]), Err(SlopeError::EmptyWindow));
        assert_eq!(
            LossWindow::new(vec![(3, 1.0), (3, 2.0)]),
            Err(SlopeError::NonIncreasingSteps)
        );
        assert_eq!(
            LossWindow::new(vec![(0, 1.0), (1, f64::NAN)]),
            Err(SlopeError::NonFiniteLoss(1))
        );
    }

    #[test]
    fn constant_sequence_has_zero_velocity() {
        let w = series(|_| 3.0, 100);
        let est = fit_descent_velocity(&w, 3.0).unwrap();
        assert_eq!(est.velocity, 0.0);
        assert_eq!(est.residual_std, 0.0);
        assert_eq!(est.e_bound, 0.0);
    }

    #[test]
    fn exact_line_negates_the_slope() {
        let w = series(|t| 5.0 - 0.01 * t, 100);
        let est = fit_descent_velocity(&w, 3.0).unwrap();
        assert!((est.velocity - 0.01).abs() < 1e-14, "v = {}", est.velocity);
        assert!(est.residual_std < 1e-13);
    }

    #[test]
    fn exactly_representable_line_has_zero_residuals() {
        // Integer-valued line: every intermediate quantity is exact in f64.
        let w = LossWindow::from_series(0, &[8.0, 6.0, 4.0, 2.0]).unwrap();
        let est = fit_descent_velocity(&w, 3.0).unwrap();
        assert_eq!(est.velocity, 2.0);
        assert_eq!(est.residual_std, 0.0);
        assert_eq!(est.e_bound, 0.0);
    }

    #[test]
    fn two_point_window_fits_without_residual() {
        let w = LossWindow::new(vec![(10, 4.0), (20, 2.0)]).unwrap();
        let est = fit_descent_velocity(&w, 3.0).unwrap();
        assert!((est.velocity - 0.2).abs() < 1e-15);
        assert_eq!(est.residual_std, 0.0);
    }

    #[test]
    fn window_too_short_is_rejected() {
        let w = LossWindow::new(vec![(0, 1.0)]).unwrap();
        assert_eq!(
            fit_descent_velocity(&w, 3.0),
            Err(SlopeError::WindowTooShort(1))
        );
    }

    #[test]
    fn noisy_line_matches_closed_form_slope_error() {
        // For unit spacing the OLS slope standard deviation is
        // sigma * sqrt(12 / (k (k^2 - 1))). Verified here by Monte Carlo.
        let k = 100usize;
        let sigma = 0.1;
        let closed_form = sigma * (12.0 / (k as f64 * ((k * k - 1) as f64))).sqrt();
        assert!((closed_form - 3.464e-4).abs() < 1e-6);

        let normal = Normal::new(0.0, sigma).unwrap();
        let mut velocities = Vec::with_capacity(10_000);
        let mut covered = 0usize;
        for seed in 0..10_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let losses: Vec<f64> = (0..k)
                .map(|t| 5.0 - 0.01 * t as f64 + normal.sample(&mut rng))
                .collect();
            let w = LossWindow::from_series(0, &losses).unwrap();
            let est = fit_descent_velocity(&w, 3.0).unwrap();
            velocities.push(est.velocity);
            if (est.velocity - 0.01).abs() <= est.e_bound {
                covered += 1;
            }
        }
        let mean = velocities.iter().sum::<f64>() / velocities.len() as f64;
        let var = velocities.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (velocities.len() - 1) as f64;
        let empirical = var.sqrt();
        assert!(
            (empirical - closed_form).abs() / closed_form < 0.05,
            "empirical {empirical}, closed form {closed_form}"
        );
        // e_bound at multiplier 3 should cover the true velocity ~99.7% of the time.
        assert!(covered >= 9_900, "covered {covered} of 10000");
    }

    #[test]
    fn window_mean_examples() {
        let w = LossWindow::from_series(0, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(window_mean(&w), 2.0);
        let single = LossWindow::from_series(7, &[0.7]).unwrap();
        assert_eq!(window_mean(&single), 0.7);
        // Arithmetic series: mean of 5 - 0.01 t over t = 1..=100 is 5 - 0.01 * 50.5.
        let w = LossWindow::new((1..=100).map(|t| (t, 5.0 - 0.01 * t as f64)).collect()).unwrap();
        assert!((window_mean(&w) - 4.495).abs() < 1e-12);
    }

    #[test]
    fn e_bound_shrinks_as_k_to_the_three_halves() {
        // Consistency: doubling the window shrinks the slope error by ~2^(3/2).
        let k = 200usize;
        let sigma = 0.05;
        let se = |k: usize| sigma * (12.0 / (k as f64 * ((k * k - 1) as f64))).sqrt();
        let ratio = se(k) / se(2 * k);
        let expected = (2.0f64).powf(1.5);
        assert!((ratio - expected).abs() / expected < 0.01, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn adding_a_constant_leaves_velocity_unchanged(
            shift in -100.0f64..100.0,
            slope in -1.0f64..1.0,
            noise_seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let normal = Normal::new(0.0, 0.3).unwrap();
            let losses: Vec<f64> =
                (0..50).map(|t| slope * t as f64 + normal.sample(&mut rng)).collect();
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let a = fit_descent_velocity(&LossWindow::from_series(0, &losses).unwrap(), 3.0).unwrap();
            let b = fit_descent_velocity(&LossWindow::from_series(0, &shifted).unwrap(), 3.0).unwrap();
            prop_assert!((a.velocity - b.velocity).abs() < 1e-10);
            prop_assert!((a.residual_std - b.residual_std).abs() < 1e-10);
        }

        #[test]
        fn scaling_scales_velocity_and_residuals(
            scale in -4.0f64..4.0,
            noise_seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let normal = Normal::new(0.0, 0.3).unwrap();
            let losses: Vec<f64> =
                (0..50).map(|t| 2.0 - 0.03 * t as f64 + normal.sample(&mut rng)).collect();
            let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
            let a = fit_descent_velocity(&LossWindow::from_series(0, &losses).unwrap(), 3.0).unwrap();
            let b = fit_descent_velocity(&LossWindow::from_series(0, &scaled).unwrap(), 3.0).unwrap();
            prop_assert!((b.velocity - scale * a.velocity).abs() < 1e-9);
            prop_assert!((b.residual_std - scale.abs() * a.residual_std).abs() < 1e-9);
            // Negating the losses negates the velocity (reversal antisymmetry).
            let negated: Vec<f64> = losses.iter().map(|l| -l).collect();
            let c = fit_descent_velocity(&LossWindow::from_series(0, &negated).unwrap(), 3.0).unwrap();
            prop_assert!((c.velocity + a.velocity).abs() < 1e-10);
        }
    }
}
