//! Gradient boosting on log-loss with depth-limited regression trees.
//!
//! Each stage fits a least-squares tree to the residuals `y - p` using exact
//! greedy splits, then sets every leaf to one Newton step
//! `sum(r) / sum(p (1 - p))`. If a leaf's step would raise the loss of the
//! rows it holds, the step is halved until it does not, so the training loss
//! never goes up from one stage to the next.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dataset, Label, N_FEATURES};
use crate::math::sigmoid;
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbcParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbcParams {
    fn default() -> Self {
        GbcParams { n_estimators: 100, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 2 }
    }
}

impl GbcParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::param("gbc.n_estimators", "must be at least 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::param("gbc.max_depth", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("gbc.learning_rate", "must be non-negative"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::param("gbc.min_samples_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Nodes in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.nodes[self.leaf_of(x)].value()
    }

    fn leaf_of(&self, x: &[f64; N_FEATURES]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

impl Node {
    fn value(&self) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbcModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbcModel {
    /// Additive log-odds score.
    pub fn decision(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Log-odds after the first `stages` trees.
    pub fn staged_decision(&self, x: &[f64; N_FEATURES], stages: usize) -> f64 {
        self.init + self.learning_rate * self.trees.iter().take(stages).map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn score(&self, x: &[f64; N_FEATURES]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> Label {
        Label::from_positive(self.decision(x) > 0.0)
    }
}

/// Model plus mean training log-loss before the first stage and after each.
#[derive(Debug, Clone, PartialEq)]
pub struct GbcTrace {
    pub model: GbcModel,
    pub losses: Vec<f64>,
}

fn log_loss(f: f64, y: f64) -> f64 {
    // log(1 + e^f) - y f
    f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f
}

pub fn train_gbc(data: &Dataset, params: &GbcParams) -> Result<GbcModel> {
    Ok(train_gbc_traced(data, params)?.model)
}

pub fn train_gbc_traced(data: &Dataset, params: &GbcParams) -> Result<GbcTrace> {
    params.validate()?;
    data.require_both_classes()?;
    let x = data.inputs();
    let y: Vec<f64> = data.labels.iter().map(|l| l.as_u8() as f64).collect();
    let n = x.len();
    let (_, pos) = data.class_counts();
    let prior = pos as f64 / n as f64;
    let init = (prior / (1.0 - prior)).ln();

    let mut f = vec![init; n];
    let mean_loss = |f: &[f64]| f.iter().zip(&y).map(|(fi, yi)| log_loss(*fi, *yi)).sum::<f64>() / n as f64;
    let mut losses = vec![mean_loss(&f)];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..params.n_estimators {
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = (0..n).map(|i| y[i] - p[i]).collect();
        let mut builder = TreeBuilder { x: &x, r: &r, params, nodes: Vec::new(), leaves: Vec::new() };
        builder.grow(all.clone(), 0);
        let TreeBuilder { mut nodes, leaves, .. } = builder;
        for (node, rows) in leaves {
            let value = leaf_value(&rows, &f, &y, &p, params.learning_rate);
            nodes[node] = Node::Leaf { value };
            for &i in &rows {
                f[i] += params.learning_rate * value;
            }
        }
        trees.push(Tree { nodes });
        losses.push(mean_loss(&f));
    }
    Ok(GbcTrace { model: GbcModel { init, learning_rate: params.learning_rate, trees }, losses })
}

/// Steps a leaf may be halved before it is zeroed.
const MAX_LEAF_HALVINGS: usize = 30;

fn leaf_value(rows: &[usize], f: &[f64], y: &[f64], p: &[f64], lr: f64) -> f64 {
    let num: f64 = rows.iter().map(|&i| y[i] - p[i]).sum();
    let den: f64 = rows.iter().map(|&i| p[i] * (1.0 - p[i])).sum();
    if den <= 1e-300 || num == 0.0 {
        return 0.0;
    }
    let loss_at = |v: f64| rows.iter().map(|&i| log_loss(f[i] + lr * v, y[i])).sum::<f64>();
    let before = loss_at(0.0);
    let mut value = num / den;
    for _ in 0..MAX_LEAF_HALVINGS {
        if !value.is_finite() {
            value *= 0.5;
            continue;
        }
        if loss_at(value) <= before {
            return value;
        }
        value *= 0.5;
    }
    0.0
}

struct TreeBuilder<'a> {
    x: &'a [[f64; N_FEATURES]],
    r: &'a [f64],
    params: &'a GbcParams,
    nodes: Vec<Node>,
    /// (node index, rows) for every leaf, filled in after growth.
    leaves: Vec<(usize, Vec<usize>)>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.params.max_depth { self.best_split(&rows) } else { None };
        match split {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[at] = Node::Split { feature, threshold, left, right };
            }
            None => self.leaves.push((at, rows)),
        }
        at
    }

    /// Largest squared-error reduction over all features and midpoints.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let min_leaf = self.params.min_samples_leaf;
        if rows.len() < 2 * min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.r[i]).sum();
        let n = rows.len() as f64;
        let base = total * total / n;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for feature in 0..N_FEATURES {
            sorted.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..sorted.len() - 1 {
                left_sum += self.r[sorted[k]];
                let n_left = k + 1;
                let (lo, hi) = (self.x[sorted[k]][feature], self.x[sorted[k + 1]][feature]);
                if n_left < min_leaf || sorted.len() - n_left < min_leaf || lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let score =
                    left_sum * left_sum / n_left as f64 + right_sum * right_sum / (sorted.len() - n_left) as f64;
                let gain = score - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
