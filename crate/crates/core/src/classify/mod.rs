//! Symmetric/asymmetric classification of [`FeatureVector`]s.
//!
//! Three members are trained on the same rows: an RBF-kernel support vector
//! machine ([`svm`]), a 7-50-50-50-1 perceptron ([`mlp`]) and gradient-boosted
//! regression trees ([`gbc`]). The ensemble label is the 2-of-3 majority of
//! their hard votes.

pub mod gbc;
pub mod mlp;
pub mod svm;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::{Error, Result};

pub use gbc::{GbcModel, GbcParams};
pub use mlp::{MlpModel, MlpParams};
pub use svm::{SvmModel, SvmParams};

/// Number of inputs every member consumes.
pub const N_FEATURES: usize = 7;

/// Class label. Asymmetric is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Symmetric,
    Asymmetric,
}

impl Label {
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Asymmetric
        } else {
            Label::Symmetric
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Asymmetric
    }

    /// 0 for symmetric, 1 for asymmetric.
    pub fn as_u8(self) -> u8 {
        self.is_positive() as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Symmetric),
            1 => Some(Label::Asymmetric),
            _ => None,
        }
    }

    /// +1 for asymmetric, -1 for symmetric.
    pub(crate) fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Symmetric => "symmetric",
            Label::Asymmetric => "asymmetric",
        })
    }
}

impl core::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" | "symmetric" | "sym" => Ok(Label::Symmetric),
            "1" | "asymmetric" | "asym" => Ok(Label::Asymmetric),
            _ => Err(Error::param("label", "expected 0, 1, symmetric or asymmetric")),
        }
    }
}

/// Labeled feature rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, features: Vec<FeatureVector>, labels: Vec<Label>) -> Result<Self> {
        if ids.len() != features.len() {
            return Err(Error::LengthMismatch(ids.len(), features.len()));
        }
        if labels.len() != features.len() {
            return Err(Error::LengthMismatch(labels.len(), features.len()));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Dataset { ids, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, id: String, fv: FeatureVector, label: Label) {
        self.ids.push(id);
        self.features.push(fv);
        self.labels.push(label);
    }

    /// (negatives, positives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (self.len() - pos, pos)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: indices.iter().map(|&i| self.features[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub(crate) fn inputs(&self) -> Vec<[f64; N_FEATURES]> {
        self.features.iter().map(|f| f.to_array()).collect()
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Hyperparameters for all three members. Missing sections fall back to the
/// defaults, unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub svm: SvmParams,
    pub mlp: MlpParams,
    pub gbc: GbcParams,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.svm.validate()?;
        self.mlp.validate()?;
        self.gbc.validate()
    }
}

/// Version tag written into serialized models.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// The three trained members plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedEnsemble {
    pub schema_version: u32,
    pub svm: SvmModel,
    pub mlp: MlpModel,
    pub gbc: GbcModel,
    pub config: ClassifierConfig,
    pub seed: u64,
}

/// Which member produced a vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Member {
    Svm,
    Mlp,
    Gbc,
}

impl Member {
    pub const ALL: [Member; 3] = [Member::Svm, Member::Mlp, Member::Gbc];

    pub fn name(self) -> &'static str {
        match self {
            Member::Svm => "svm",
            Member::Mlp => "mlp",
            Member::Gbc => "gbc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Hard labels in [`Member::ALL`] order.
    pub votes: [Label; 3],
    /// Per-member scores in `[0, 1]`, same order.
    pub member_scores: [f64; 3],
    /// Mean member score.
    pub score: f64,
}

impl Prediction {
    pub fn vote(&self, member: Member) -> Label {
        self.votes[member as usize]
    }

    pub fn member_score(&self, member: Member) -> f64 {
        self.member_scores[member as usize]
    }
}

/// 2-of-3 majority.
pub fn majority(votes: [Label; 3]) -> Label {
    let pos = votes.iter().filter(|v| v.is_positive()).count();
    Label::from_positive(pos >= 2)
}

/// Train all three members on `data`. The seed only affects the perceptron.
pub fn train_ensemble(data: &Dataset, config: &ClassifierConfig, seed: u64) -> Result<TrainedEnsemble> {
    config.validate()?;
    data.require_both_classes()?;
    Ok(TrainedEnsemble {
        schema_version: MODEL_SCHEMA_VERSION,
        svm: svm::train_svm(data, &config.svm)?,
        mlp: mlp::train_mlp(data, &config.mlp, seed)?,
        gbc: gbc::train_gbc(data, &config.gbc)?,
        config: config.clone(),
        seed,
    })
}

pub fn predict(model: &TrainedEnsemble, fv: &FeatureVector) -> Result<Prediction> {
    if !fv.is_finite() {
        return Err(Error::NonFinite);
    }
    if fv.degenerate {
        // an empty hemithorax is as asymmetric as it gets
        let a = Label::Asymmetric;
        return Ok(Prediction { label: a, votes: [a; 3], member_scores: [1.0; 3], score: 1.0 });
    }
    let x = fv.to_array();
    let member_scores = [model.svm.score(&x), model.mlp.score(&x), model.gbc.score(&x)];
    Ok(combine(member_scores))
}

pub(crate) fn combine(member_scores: [f64; 3]) -> Prediction {
    let votes = member_scores.map(|s| Label::from_positive(s > 0.5));
    Prediction { label: majority(votes), votes, member_scores, score: member_scores.iter().sum::<f64>() / 3.0 }
}

/// Per-feature mean and standard deviation learned from training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer { mean: [0.0; N_FEATURES], scale: [1.0; N_FEATURES] }
    }

    /// Constant columns keep scale 1.
    pub fn fit(rows: &[[f64; N_FEATURES]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = [0.0; N_FEATURES];
        for r in rows {
            for k in 0..N_FEATURES {
                scale[k] += (r[k] - mean[k]) * (r[k] - mean[k]) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        core::array::from_fn(|k| (x[k] - self.mean[k]) / self.scale[k])
    }
}
