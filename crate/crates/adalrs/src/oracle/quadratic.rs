//! Isotropic quadratic bowl with a known optimal learning rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_divergence, Oracle, OptimizerKind};
use crate::error::OracleError;

/// How gradient noise scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Fixed-variance additive noise on the gradient. The loss settles on a
    /// noise floor proportional to the learning rate.
    Absolute,
    /// Noise proportional to the gradient norm, mimicking relative mini-batch
    /// noise. The loss keeps contracting geometrically with no floor.
    Relative,
}

/// Loss `0.5 * curvature * |params|^2` under SGD with optional momentum and
/// gradient noise. The curvature is the gradient Lipschitz constant, so the
/// expected one-step contraction is best at `lr = 1 / curvature` and the
/// dynamics diverge beyond `2 / curvature`.
#[derive(Clone, Debug)]
pub struct QuadraticOracle {
    curvature: f64,
    noise_std: f64,
    noise_mode: NoiseMode,
    momentum_coeff: f64,
    params: Vec<f64>,
    momentum: Vec<f64>,
    rng: ChaCha8Rng,
    initial_loss: f64,
}

/// Complete mutable state of a [`QuadraticOracle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCheckpoint {
    pub params: Vec<f64>,
    pub momentum: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl QuadraticOracle {
    /// Starts every coordinate at `init_norm / sqrt(dim)` so the parameter
    /// vector has norm `init_norm` and the initial loss is
    /// `0.5 * curvature * init_norm^2`.
    pub fn new(
        curvature: f64,
        dim: usize,
        init_norm: f64,
        noise_std: f64,
        noise_mode: NoiseMode,
        optimizer: OptimizerKind,
        momentum_coeff: f64,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(OracleError::InvalidConfig(format!(
                "curvature must be positive, got {curvature}"
            )));
        }
        if dim == 0 {
            return Err(OracleError::InvalidConfig("dim must be at least 1".into()));
        }
        if !(init_norm > 0.0 && init_norm.is_finite()) {
            return Err(OracleError::InvalidConfig(format!(
                "init_norm must be positive, got {init_norm}"
            )));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(OracleError::InvalidConfig(format!(
                "noise_std must be non-negative, got {noise_std}"
            )));
        }
        let coord = init_norm / (dim as f64).sqrt();
        let params = vec![coord; dim];
        let initial_loss = 0.5 * curvature * init_norm * init_norm;
        if !initial_loss.is_finite() {
            return Err(OracleError::InvalidConfig(
                "initial loss overflows; lower init_norm".into(),
            ));
        }
        Ok(QuadraticOracle {
            curvature,
            noise_std,
            noise_mode,
            momentum_coeff: match optimizer {
                OptimizerKind::Sgd => 0.0,
                OptimizerKind::Momentum => momentum_coeff,
            },
            params,
            momentum: vec![0.0; dim],
            rng: ChaCha8Rng::seed_from_u64(seed),
            initial_loss,
        })
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn current_loss(&self) -> f64 {
        0.5 * self.curvature * self.params.iter().map(|p| p * p).sum::<f64>()
    }

    /// Closed-form optimal constant rate for the expected one-step
    /// contraction: the reciprocal of the gradient Lipschitz constant.
    pub fn optimal_lr_reference(&self) -> f64 {
        1.0 / self.curvature
    }
}

impl Oracle for QuadraticOracle {
    type Checkpoint = QuadraticCheckpoint;

    fn step(&mut self, lr: f64) -> Result<f64, OracleError> {
        let loss = self.current_loss();
        check_divergence(loss, self.initial_loss)?;

        let dim = self.params.len();
        let grad_norm = match self.noise_mode {
            NoiseMode::Relative if self.noise_std > 0.0 => {
                let sq: f64 = self.params.iter().map(|p| {
                    let g = self.curvature * p;
                    g * g
                }).sum();
                sq.sqrt()
            }
            _ => 0.0,
        };
        for i in 0..dim {
            let mut g = self.curvature * self.params[i];
            if self.noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                g += match self.noise_mode {
                    NoiseMode::Absolute => self.noise_std * z,
                    NoiseMode::Relative => self.noise_std * grad_norm * z / (dim as f64).sqrt(),
                };
            }
            // momentum_coeff is 0 for plain SGD, making this a single code path.
            self.momentum[i] = self.momentum_coeff * self.momentum[i] + g;
            self.params[i] -= lr * self.momentum[i];
        }
        Ok(loss)
    }

    fn snapshot(&self) -> QuadraticCheckpoint {
        QuadraticCheckpoint {
            params: self.params.clone(),
            momentum: self.momentum.clone(),
            rng: self.rng.clone(),
        }
    }

    fn restore(&mut self, checkpoint: &QuadraticCheckpoint) {
        self.params = checkpoint.params.clone();
        self.momentum = checkpoint.momentum.clone();
        self.rng = checkpoint.rng.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(curvature: f64, init_norm: f64, noise_std: f64) -> QuadraticOracle {
        QuadraticOracle::new(
            curvature,
            1,
            init_norm,
            noise_std,
            NoiseMode::Absolute,
            OptimizerKind::Sgd,
            0.0,
            7,
        )
        .unwrap()
    }

    #[test]
    fn one_step_convergence_at_reciprocal_curvature() {
        // (1 - lr * C) = 0 kills the parameter in a single update.
        let mut o = plain(100.0, 1.0, 0.0);
        let loss = o.step(0.01).unwrap();
        assert_eq!(loss, 50.0);
        assert_eq!(o.params()[0], 0.0);
        assert_eq!(o.step(0.01).unwrap(), 0.0);
    }

    #[test]
    fn half_rate_halves_the_parameter() {
        let mut o = plain(100.0, 1.0, 0.0);
        o.step(0.005).unwrap();
        assert!((o.params()[0] - 0.5).abs() < 1e-15);
        let next_loss = o.step(0.005).unwrap();
        assert!((next_loss - 12.5).abs() < 1e-12);
    }

    #[test]
    fn rates_beyond_the_stability_edge_diverge() {
        // |1 - 0.021 * 100| = 1.1, so the loss grows ~1.21x per step and the
        // divergence bound trips well within 2000 steps.
        let mut o = plain(100.0, 1.0, 0.0);
        let mut diverged = false;
        for _ in 0..2000 {
            match o.step(0.021) {
                Ok(_) => {}
                Err(OracleError::Diverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(diverged);
    }

    #[test]
    fn zero_rate_freezes_the_loss() {
        let mut o = plain(2.0, 3.0, 0.0);
        let first = o.step(0.0).unwrap();
        for _ in 0..10 {
            assert_eq!(o.step(0.0).unwrap(), first);
        }
    }

    #[test]
    fn optimal_lr_is_reciprocal_curvature() {
        assert_eq!(plain(100.0, 1.0, 0.0).optimal_lr_reference(), 0.01);
        assert_eq!(plain(2.0, 1.0, 0.0).optimal_lr_reference(), 0.5);
    }

    #[test]
    fn snapshot_restore_replays_bit_identically() {
        let mut o = QuadraticOracle::new(
            50.0,
            4,
            1.0,
            0.2,
            NoiseMode::Absolute,
            OptimizerKind::Momentum,
            0.9,
            42,
        )
        .unwrap();
        for _ in 0..25 {
            o.step(0.002).unwrap();
        }
        let checkpoint = o.snapshot();
        let first: Vec<f64> = (0..50).map(|_| o.step(0.002).unwrap()).collect();
        o.restore(&checkpoint);
        let second: Vec<f64> = (0..50).map(|_| o.step(0.002).unwrap()).collect();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_serialization_round_trips_losslessly() {
        let mut o = QuadraticOracle::new(
            10.0,
            3,
            1e150,
            0.1,
            NoiseMode::Relative,
            OptimizerKind::Momentum,
            0.9,
            3,
        )
        .unwrap();
        for _ in 0..10 {
            o.step(0.01).unwrap();
        }
        let checkpoint = o.snapshot();
        let json = serde_json::to_string(&checkpoint).unwrap();
        let back: QuadraticCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(checkpoint, back);
        for (a, b) in checkpoint.params.iter().zip(&back.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in checkpoint.momentum.iter().zip(&back.momentum) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn relative_noise_has_no_floor() {
        let mut o = QuadraticOracle::new(
            100.0,
            2,
            1.0,
            0.1,
            NoiseMode::Relative,
            OptimizerKind::Sgd,
            0.0,
            11,
        )
        .unwrap();
        let mut loss = 0.0;
        for _ in 0..3000 {
            loss = o.step(0.005).unwrap();
        }
        // Absolute noise at this rate would floor near 1e-7; relative noise
        // keeps contracting toward zero.
        assert!(loss < 1e-100, "loss {loss}");
    }
}
