//! Soft-margin support vector machine with an RBF kernel, trained by
//! sequential pairwise (SMO) optimization of the dual with second-order
//! working-set selection.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Standardizer, N_FEATURES};
use crate::math::sigmoid;
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    /// Penalty on margin violations.
    pub c: f64,
    /// Kernel width in `exp(-gamma * |x - z|^2)`.
    pub gamma: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    /// Center and scale each feature with training statistics first.
    pub standardize: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 0.1, gamma: 0.01, tol: 1e-4, standardize: true }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("svm.c", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("svm.gamma", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("svm.tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<[f64; N_FEATURES]>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub standardizer: Standardizer,
}

impl SvmModel {
    /// `sum(alpha_i y_i k(x_i, x)) + b`.
    pub fn decision(&self, x: &[f64; N_FEATURES]) -> f64 {
        let z = self.standardizer.apply(x);
        let s: f64 = self.support_vectors.iter().zip(&self.dual_coef).map(|(sv, a)| a * rbf(sv, &z, self.gamma)).sum();
        s + self.bias
    }

    pub fn score(&self, x: &[f64; N_FEATURES]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> Label {
        Label::from_positive(self.decision(x) > 0.0)
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Solution of the dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset; `d(x) = sum(alpha_i y_i k_i(x)) - rho`.
    pub rho: f64,
    pub iterations: usize,
    /// Final maximal violating-pair gap.
    pub gap: f64,
}

/// Solve `min 1/2 a'Qa - e'a` s.t. `y'a = 0`, `0 <= a_i <= c_i` with
/// `Q_ij = y_i y_j k(x_i, x_j)`. Labels are +1/-1.
pub fn solve_dual(kernel: &[f64], y: &[f64], c: &[f64], tol: f64, max_iter: usize) -> DualSolution {
    let n = y.len();
    debug_assert_eq!(kernel.len(), n * n);
    let k = |i: usize, j: usize| kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64, ct: f64| (yt > 0.0 && a < ct) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64, ct: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < ct);

    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    while iterations < max_iter {
        let mut m = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t], c[t]) {
                let v = -y[t] * grad[t];
                if v > m {
                    m = v;
                    i = t;
                }
            }
        }
        let mut big_m = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t], c[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            big_m = big_m.min(v);
            if i != usize::MAX && v < m {
                let b = m - v;
                let a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -b * b / a.max(1e-12);
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = m - big_m;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break;
        }
        iterations += 1;

        let a = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(1e-12);
        let b = -y[i] * grad[i] + y[j] * grad[j];
        let room_i = if y[i] > 0.0 { c[i] - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c[j] - alpha[j] };
        let lambda = (b / a).min(room_i).min(room_j);
        alpha[i] += y[i] * lambda;
        alpha[j] -= y[j] * lambda;
        // snap onto the box so bound tests stay exact
        for t in [i, j] {
            if alpha[t] < 1e-14 * c[t] {
                alpha[t] = 0.0;
            } else if alpha[t] > c[t] * (1.0 - 1e-14) {
                alpha[t] = c[t];
            }
        }
        for t in 0..n {
            grad[t] += y[t] * lambda * (k(t, i) - k(t, j));
        }
    }

    DualSolution { rho: offset(&alpha, &grad, y, c), alpha, iterations, gap }
}

fn offset(alpha: &[f64], grad: &[f64], y: &[f64], c: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c[t];
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] > 0.0 {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Cap on SMO iterations per training run.
pub const MAX_SMO_ITERATIONS: usize = 10_000_000;

pub fn train_svm(data: &Dataset, params: &SvmParams) -> Result<SvmModel> {
    let c = vec![params.c; data.len()];
    train_svm_weighted(data, &c, params)
}

/// Training with a per-row penalty; `params.c` is only recorded.
pub fn train_svm_weighted(data: &Dataset, c: &[f64], params: &SvmParams) -> Result<SvmModel> {
    params.validate()?;
    data.require_both_classes()?;
    if c.len() != data.len() {
        return Err(Error::LengthMismatch(c.len(), data.len()));
    }
    if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::param("svm.c", "per-row penalties must be positive"));
    }
    let raw = data.inputs();
    let standardizer = if params.standardize { Standardizer::fit(&raw) } else { Standardizer::identity() };
    let x: Vec<[f64; N_FEATURES]> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let y: Vec<f64> = data.labels.iter().map(|l| l.sign()).collect();
    let n = x.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&x[i], &x[j], params.gamma);
            kernel[i * n + j] = v;
            kernel[j * n + i] = v;
        }
    }
    let sol = solve_dual(&kernel, &y, c, params.tol, MAX_SMO_ITERATIONS);
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if sol.alpha[t] > 0.0 {
            support_vectors.push(x[t]);
            dual_coef.push(sol.alpha[t] * y[t]);
        }
    }
    Ok(SvmModel { support_vectors, dual_coef, bias: -sol.rho, gamma: params.gamma, c: params.c, standardizer })
}
