//! Small feed-forward regression problem with a hand-coded backward pass.
//!
//! A seeded teacher network of the same shape generates a frozen synthetic
//! dataset at construction, so every oracle built from the same seed trains
//! on identical data. Hidden layers use tanh; the output layer is linear and
//! the loss is mean squared error over the sampled mini-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_divergence, Oracle, OptimizerKind};
use crate::error::OracleError;

/// One dense layer, row-major: `weights[o * fan_in + i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn seeded(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        let biases = vec![0.0; fan_out];
        Layer {
            fan_in,
            fan_out,
            weights,
            biases,
        }
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            weights: vec![0.0; self.weights.len()],
            biases: vec![0.0; self.biases.len()],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.fan_out {
            let row = &self.weights[o * self.fan_in..(o + 1) * self.fan_in];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Mutable state of an [`MlpOracle`]: student weights, momentum buffers, and
/// the batch-sampling RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    layers: Vec<Layer>,
    momentum: Vec<Layer>,
    rng: ChaCha8Rng,
}

/// Student network trained to match a frozen teacher on a fixed dataset.
#[derive(Clone, Debug)]
pub struct MlpOracle {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    momentum: Vec<Layer>,
    momentum_coeff: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    batch_size: usize,
    rng: ChaCha8Rng,
    initial_loss: f64,
}

impl MlpOracle {
    pub fn new(
        sizes: &[usize],
        samples: usize,
        batch_size: usize,
        optimizer: OptimizerKind,
        momentum_coeff: f64,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(OracleError::InvalidConfig(format!(
                "layer sizes must list at least input and output widths, got {sizes:?}"
            )));
        }
        if samples == 0 || batch_size == 0 || batch_size > samples {
            return Err(OracleError::InvalidConfig(format!(
                "need 0 < batch_size <= samples, got batch {batch_size} of {samples}"
            )));
        }

        // Dataset first: teacher weights and inputs come from a dedicated
        // stream so the data does not depend on training hyperparameters.
        let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher: Vec<Layer> = sizes
            .windows(2)
            .map(|pair| Layer::seeded(pair[0], pair[1], &mut data_rng))
            .collect();
        let input_dim = sizes[0];
        let mut inputs = Vec::with_capacity(samples);
        let mut targets = Vec::with_capacity(samples);
        let mut scratch_a = Vec::new();
        let mut scratch_b = Vec::new();
        for _ in 0..samples {
            let x: Vec<f64> = (0..input_dim)
                .map(|_| StandardNormal.sample(&mut data_rng))
                .collect();
            let y = forward_network(&teacher, &x, &mut scratch_a, &mut scratch_b);
            inputs.push(x);
            targets.push(y);
        }

        let mut train_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let layers: Vec<Layer> = sizes
            .windows(2)
            .map(|pair| Layer::seeded(pair[0], pair[1], &mut train_rng))
            .collect();
        let momentum = layers.iter().map(Layer::zeros_like).collect();

        let mut oracle = MlpOracle {
            sizes: sizes.to_vec(),
            layers,
            momentum,
            momentum_coeff: match optimizer {
                OptimizerKind::Sgd => 0.0,
                OptimizerKind::Momentum => momentum_coeff,
            },
            inputs,
            targets,
            batch_size,
            rng: train_rng,
            initial_loss: 0.0,
        };
        let all: Vec<usize> = (0..samples).collect();
        oracle.initial_loss = oracle.batch_loss(&all);
        Ok(oracle)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dataset_len(&self) -> usize {
        self.inputs.len()
    }

    /// Mean squared error over the given sample indices with current weights.
    pub fn batch_loss(&self, indices: &[usize]) -> f64 {
        let mut scratch_a = Vec::new();
        let mut scratch_b = Vec::new();
        let mut acc = 0.0;
        let mut count = 0usize;
        for &i in indices {
            let pred = forward_network(&self.layers, &self.inputs[i], &mut scratch_a, &mut scratch_b);
            for (p, t) in pred.iter().zip(&self.targets[i]) {
                let d = p - t;
                acc += d * d;
                count += 1;
            }
        }
        acc / count as f64
    }

    /// Backward pass over the given indices. Returns per-layer gradients of
    /// the mean squared error.
    fn batch_gradients(&self, indices: &[usize]) -> Vec<Layer> {
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let denom = (indices.len() * self.sizes[self.sizes.len() - 1]) as f64;

        for &idx in indices {
            // Forward, keeping activations per layer.
            let mut activations: Vec<Vec<f64>> = vec![self.inputs[idx].clone()];
            let mut pre = Vec::new();
            for (li, layer) in self.layers.iter().enumerate() {
                layer.forward(activations.last().unwrap(), &mut pre);
                let last = li + 1 == self.layers.len();
                let act = if last {
                    pre.clone()
                } else {
                    pre.iter().map(|z| z.tanh()).collect()
                };
                activations.push(act);
            }

            // d(MSE)/d(output) = 2 * (pred - target) / (batch * out_dim).
            let output = activations.last().unwrap();
            let mut delta: Vec<f64> = output
                .iter()
                .zip(&self.targets[idx])
                .map(|(p, t)| 2.0 * (p - t) / denom)
                .collect();

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &activations[li];
                let grad = &mut grads[li];
                for o in 0..layer.fan_out {
                    let d = delta[o];
                    grad.biases[o] += d;
                    let row = &mut grad.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if li > 0 {
                    // Propagate through the weights, then through tanh of the
                    // previous layer's pre-activation: 1 - a^2 in terms of
                    // the stored activation a.
                    let mut prev = vec![0.0; layer.fan_in];
                    for o in 0..layer.fan_out {
                        let d = delta[o];
                        let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(&activations[li]) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        grads
    }

    fn sample_batch(&mut self) -> Vec<usize> {
        let n = self.inputs.len();
        (0..self.batch_size)
            .map(|_| self.rng.gen_range(0..n))
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn gradient_check(&self, indices: &[usize], coords: usize, seed: u64) -> f64 {
        // Central finite differences against the analytic gradient; returns
        // the worst relative error over `coords` random weight coordinates.
        let mut probe = self.clone();
        let grads = self.batch_gradients(indices);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..coords {
            let li = rng.gen_range(0..self.layers.len());
            let wi = rng.gen_range(0..self.layers[li].weights.len());
            let h = 1e-5;
            let orig = probe.layers[li].weights[wi];
            probe.layers[li].weights[wi] = orig + h;
            let plus = probe.batch_loss(indices);
            probe.layers[li].weights[wi] = orig - h;
            let minus = probe.batch_loss(indices);
            probe.layers[li].weights[wi] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[li].weights[wi];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((numeric - analytic).abs() / denom);
        }
        worst
    }
}

fn forward_network(
    layers: &[Layer],
    input: &[f64],
    scratch_a: &mut Vec<f64>,
    scratch_b: &mut Vec<f64>,
) -> Vec<f64> {
    scratch_a.clear();
    scratch_a.extend_from_slice(input);
    for (li, layer) in layers.iter().enumerate() {
        layer.forward(scratch_a, scratch_b);
        std::mem::swap(scratch_a, scratch_b);
        if li + 1 != layers.len() {
            for v in scratch_a.iter_mut() {
                *v = v.tanh();
            }
        }
    }
    scratch_a.clone()
}

impl Oracle for MlpOracle {
    type Checkpoint = MlpCheckpoint;

    fn step(&mut self, lr: f64) -> Result<f64, OracleError> {
        let batch = self.sample_batch();
        let loss = self.batch_loss(&batch);
        check_divergence(loss, self.initial_loss)?;

        let grads = self.batch_gradients(&batch);
        for ((layer, buf), grad) in self
            .layers
            .iter_mut()
            .zip(&mut self.momentum)
            .zip(&grads)
        {
            for ((w, m), g) in layer
                .weights
                .iter_mut()
                .zip(&mut buf.weights)
                .zip(&grad.weights)
            {
                *m = self.momentum_coeff * *m + g;
                *w -= lr * *m;
            }
            for ((b, m), g) in layer
                .biases
                .iter_mut()
                .zip(&mut buf.biases)
                .zip(&grad.biases)
            {
                *m = self.momentum_coeff * *m + g;
                *b -= lr * *m;
            }
        }
        Ok(loss)
    }

    fn snapshot(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            layers: self.layers.clone(),
            momentum: self.momentum.clone(),
            rng: self.rng.clone(),
        }
    }

    fn restore(&mut self, checkpoint: &MlpCheckpoint) {
        self.layers = checkpoint.layers.clone();
        self.momentum = checkpoint.momentum.clone();
        self.rng = checkpoint.rng.clone();
    }
}
