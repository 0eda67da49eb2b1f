//! Fully connected network with rectified-linear hidden layers and a sigmoid
//! output, trained on binary cross-entropy with Adam and early stopping.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Standardizer, N_FEATURES};
use crate::math::sigmoid;
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: [usize; 3],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub standardize: bool,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: [50, 50, 50],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            validation_fraction: 0.1,
            patience: 20,
            max_epochs: 500,
            standardize: true,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::param("mlp.hidden", "layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("mlp.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("mlp.beta", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("mlp.batch_size", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::param("mlp.validation_fraction", "must lie in [0, 0.5)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("mlp.max_epochs", "must be positive"));
        }
        Ok(())
    }

    fn sizes(&self) -> [usize; 5] {
        [N_FEATURES, self.hidden[0], self.hidden[1], self.hidden[2], 1]
    }
}

/// Network weights, flattened layer by layer as `W (out x in)` then `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub sizes: [usize; 5],
    pub params: Vec<f64>,
    pub standardizer: Standardizer,
    /// Epochs actually run before early stopping.
    pub epochs: usize,
}

fn param_count(sizes: &[usize; 5]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: [usize; 5], rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(param_count(&sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        MlpModel { sizes, params, standardizer: Standardizer::identity(), epochs: 0 }
    }

    /// Output logit for a standardized input.
    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let mut act: Vec<f64> = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (layer, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            act = (0..n_out)
                .map(|o| {
                    let z = bias[o] + dot(&weights[o * n_in..(o + 1) * n_in], &act);
                    if layer == last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
        }
        act[0]
    }

    pub fn score(&self, x: &[f64; N_FEATURES]) -> f64 {
        sigmoid(self.logit(&self.params, &self.standardizer.apply(x)))
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> Label {
        Label::from_positive(self.score(x) > 0.5)
    }

    /// Mean cross-entropy over `rows` and its gradient with respect to a flat
    /// parameter vector laid out like [`MlpModel::params`]. Inputs are used
    /// as given, without standardization.
    pub fn loss_and_gradient(&self, params: &[f64], x: &[[f64; N_FEATURES]], y: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            loss += self.backprop(params, xi, yi, &mut grad);
        }
        let n = x.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// Adds one row's gradient into `grad` and returns its loss.
    fn backprop(&self, params: &[f64], x: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = [0usize; 4];
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            offsets[l] = off;
            off += w[0] * w[1] + w[1];
        }
        // activations per layer, input included
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &params[offsets[l]..offsets[l] + n_in * n_out];
            let bias = &params[offsets[l] + n_in * n_out..offsets[l] + n_in * n_out + n_out];
            let prev = &acts[l];
            let next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = bias[o] + dot(&weights[o * n_in..(o + 1) * n_in], prev);
                    if l + 1 == n_layers {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(next);
        }
        let z = acts[n_layers][0];
        // log(1 + e^z) - y z, written to avoid overflow
        let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;

        let mut delta = vec![sigmoid(z) - y];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g += d * a;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &params[base..base + n_in * n_out];
            delta = (0..n_in)
                .map(|i| {
                    if prev[i] <= 0.0 {
                        return 0.0;
                    }
                    (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum()
                })
                .collect();
        }
        loss
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], p: &MlpParams) {
        self.t += 1;
        let c1 = 1.0 - p.beta1.powf(self.t as f64);
        let c2 = 1.0 - p.beta2.powf(self.t as f64);
        for k in 0..params.len() {
            self.m[k] = p.beta1 * self.m[k] + (1.0 - p.beta1) * grad[k];
            self.v[k] = p.beta2 * self.v[k] + (1.0 - p.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
        }
    }
}

/// Minimum drop in validation loss that resets the patience counter.
const IMPROVEMENT_TOL: f64 = 1e-6;

pub fn train_mlp(data: &Dataset, params: &MlpParams, seed: u64) -> Result<MlpModel> {
    params.validate()?;
    data.require_both_classes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::init(params.sizes(), &mut rng);

    let raw = data.inputs();
    model.standardizer = if params.standardize { Standardizer::fit(&raw) } else { Standardizer::identity() };
    let x: Vec<[f64; N_FEATURES]> = raw.iter().map(|r| model.standardizer.apply(r)).collect();
    let y: Vec<f64> = data.labels.iter().map(|l| l.as_u8() as f64).collect();

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (params.validation_fraction * x.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_x: Vec<[f64; N_FEATURES]> = val_idx.iter().map(|&i| x[i]).collect();
    let val_y: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();

    let mut adam = Adam::new(model.params.len());
    let mut best = (f64::INFINITY, model.params.clone());
    let mut stale = 0;
    let mut epochs = 0;
    let mut batch_x = Vec::with_capacity(params.batch_size);
    let mut batch_y = Vec::with_capacity(params.batch_size);
    for _ in 0..params.max_epochs {
        epochs += 1;
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(params.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| x[i]));
            batch_y.extend(chunk.iter().map(|&i| y[i]));
            let (_, grad) = model.loss_and_gradient(&model.params, &batch_x, &batch_y);
            adam.step(&mut model.params, &grad, params);
        }
        if val_x.is_empty() {
            continue;
        }
        let (val_loss, _) = model.loss_and_gradient(&model.params, &val_x, &val_y);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite);
        }
        if val_loss < best.0 - IMPROVEMENT_TOL {
            best = (val_loss, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }
    if !val_x.is_empty() {
        model.params = best.1;
    }
    model.epochs = epochs;
    Ok(model)
}
