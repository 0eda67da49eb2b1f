//! Cross-validation, classification metrics, segmentation IoU summaries and
//! the image corruptions used by the robustness experiment.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig, Dataset, Label, Member, Prediction, TrainedEnsemble};
use crate::hemithorax::{segment_with_spine, HemithoraxPair, SnakeMode, SpineLine};
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::raster::{self, check_same_frame, fit_ellipse, mask_iou, BinaryMask, GrayImage};
use crate::snake::SnakeParams;
use crate::{Error, Result};

/// Stratified assignment of rows to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Each class is shuffled separately, the two lists are concatenated and row
/// `j` of the concatenation goes to fold `j mod k`. Fold sizes and per-fold
/// class counts then differ by at most one.
pub fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_for_labels(&data.labels, k, seed)
}

pub fn make_folds_for_labels(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::param("k", "need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut position = 0;
    for class in [Label::Symmetric, Label::Asymmetric] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < k {
            return Err(Error::TooFewRows { label: class.as_u8(), count: rows.len(), k });
        }
        rows.shuffle(&mut rng);
        for i in rows {
            assignments[i] = position % k;
            position += 1;
        }
    }
    Ok(FoldPlan { k, assignments, seed, stratified: true })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[Label], truth: &[Label]) -> Self {
        let mut c = Confusion::default();
        for (p, t) in predicted.iter().zip(truth) {
            match (p.is_positive(), t.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Positive-class metrics. Undefined values (no predicted or no actual
/// positives, or a single class for AUC) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

pub fn classification_metrics(predictions: &[(Label, f64)], truths: &[Label]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(Error::param("predictions", "need at least one row"));
    }
    let labels: Vec<Label> = predictions.iter().map(|p| p.0).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.1).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    let confusion = Confusion::from_labels(&labels, truths);
    Ok(Metrics {
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        auc: auc(&scores, truths),
        confusion,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via midranks (Mann-Whitney U).
pub fn auc(scores: &[f64], truths: &[Label]) -> Option<f64> {
    let n_pos = truths.iter().filter(|t| t.is_positive()).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&r| truths[r].is_positive()).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics for one model on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub model: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Metrics pooled over all held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub model: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Per-fold metrics averaged over the folds where they are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub model: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowPrediction {
    pub id: String,
    pub fold: usize,
    pub truth: Label,
    #[serde(flatten)]
    pub prediction: Prediction,
}

/// Wall time per stage, in seconds, as reported by the caller's clock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub per_fold: Vec<FoldMetrics>,
    pub overall_pooled: Vec<PooledMetrics>,
    pub overall_averaged: Vec<AveragedMetrics>,
    /// Ensemble confusion pooled over folds.
    pub confusion: Confusion,
    pub predictions: Vec<RowPrediction>,
    pub runtime_stats: RuntimeStats,
}

impl EvalReport {
    pub fn pooled(&self, model: &str) -> Option<&Metrics> {
        self.overall_pooled.iter().find(|m| m.model == model).map(|m| &m.metrics)
    }
}

/// Row names in reports: the ensemble first, then the members.
pub const REPORT_MODELS: [&str; 4] = ["ensemble", "svm", "mlp", "gbc"];

fn model_view(p: &Prediction, model: usize) -> (Label, f64) {
    match model {
        0 => (p.label, p.score),
        m => (p.votes[m - 1], p.member_scores[m - 1]),
    }
}

/// Seed for fold `fold` (or row, or stage) derived from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// k-fold cross-validation of the ensemble. `clock` returns seconds and is
/// only used for `runtime_stats`.
pub fn run_cv(
    data: &Dataset,
    folds: &FoldPlan,
    config: &ClassifierConfig,
    seed: u64,
    clock: &mut dyn FnMut() -> f64,
) -> Result<EvalReport> {
    cross_validate(data, folds, seed, clock, &mut |train, fold_seed| classify::train_ensemble(train, config, fold_seed))
}

/// [`run_cv`] with a caller-supplied trainer.
pub fn cross_validate(
    data: &Dataset,
    folds: &FoldPlan,
    seed: u64,
    clock: &mut dyn FnMut() -> f64,
    train: &mut dyn FnMut(&Dataset, u64) -> Result<TrainedEnsemble>,
) -> Result<EvalReport> {
    if folds.assignments.len() != data.len() {
        return Err(Error::LengthMismatch(folds.assignments.len(), data.len()));
    }
    let start = clock();
    let mut stats = RuntimeStats::default();
    let mut per_fold = Vec::new();
    let mut slots: Vec<Option<RowPrediction>> = vec![None; data.len()];
    for fold in 0..folds.k {
        let test_idx = folds.test_indices(fold);
        let train_idx = folds.train_indices(fold);
        let t0 = clock();
        let model = train(&data.subset(&train_idx), derive_seed(seed, fold as u64))?;
        let t1 = clock();
        let mut preds = Vec::with_capacity(test_idx.len());
        for &i in &test_idx {
            preds.push(classify::predict(&model, &data.features[i])?);
        }
        stats.train_seconds += t1 - t0;
        stats.predict_seconds += clock() - t1;

        let truths: Vec<Label> = test_idx.iter().map(|&i| data.labels[i]).collect();
        for (m, name) in REPORT_MODELS.iter().enumerate() {
            let view: Vec<(Label, f64)> = preds.iter().map(|p| model_view(p, m)).collect();
            per_fold.push(FoldMetrics {
                fold,
                model: (*name).into(),
                metrics: classification_metrics(&view, &truths)?,
            });
        }
        for (&i, p) in test_idx.iter().zip(preds) {
            slots[i] = Some(RowPrediction { id: data.ids[i].clone(), fold, truth: data.labels[i], prediction: p });
        }
    }
    let predictions: Vec<RowPrediction> = slots.into_iter().map(|p| p.expect("every row is held out once")).collect();
    let truths: Vec<Label> = predictions.iter().map(|p| p.truth).collect();
    let mut overall_pooled = Vec::new();
    let mut overall_averaged = Vec::new();
    for (m, name) in REPORT_MODELS.iter().enumerate() {
        let view: Vec<(Label, f64)> = predictions.iter().map(|p| model_view(&p.prediction, m)).collect();
        overall_pooled.push(PooledMetrics { model: (*name).into(), metrics: classification_metrics(&view, &truths)? });
        let rows: Vec<&Metrics> = per_fold.iter().filter(|f| f.model == *name).map(|f| &f.metrics).collect();
        let avg = |get: fn(&Metrics) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(|m| get(m)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        overall_averaged.push(AveragedMetrics {
            model: (*name).into(),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            auc: avg(|m| m.auc),
        });
    }
    stats.total_seconds = clock() - start;
    Ok(EvalReport {
        k: folds.k,
        seed,
        confusion: overall_pooled[0].metrics.confusion,
        per_fold,
        overall_pooled,
        overall_averaged,
        predictions,
        runtime_stats: stats,
    })
}

/// Outcome of a single-member grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub member: Member,
    pub best: usize,
    /// Pooled cross-validated F1 per candidate (undefined counts as 0).
    pub scores: Vec<f64>,
}

type MemberFn = Box<dyn Fn(&[f64; classify::N_FEATURES]) -> Label>;

/// Picks the candidate configuration whose `member` section gives the best
/// pooled cross-validated F1. Only that member is trained; ties keep the
/// earlier candidate.
pub fn grid_search(
    data: &Dataset,
    folds: &FoldPlan,
    candidates: &[ClassifierConfig],
    member: Member,
    seed: u64,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::param("candidates", "grid is empty"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for cfg in candidates {
        cfg.validate()?;
        let mut predicted = vec![Label::Symmetric; data.len()];
        for fold in 0..folds.k {
            let train = data.subset(&folds.train_indices(fold));
            let fold_seed = derive_seed(seed, fold as u64);
            let predict: MemberFn = match member {
                Member::Svm => {
                    let m = classify::svm::train_svm(&train, &cfg.svm)?;
                    Box::new(move |x| m.predict(x))
                }
                Member::Mlp => {
                    let m = classify::mlp::train_mlp(&train, &cfg.mlp, fold_seed)?;
                    Box::new(move |x| m.predict(x))
                }
                Member::Gbc => {
                    let m = classify::gbc::train_gbc(&train, &cfg.gbc)?;
                    Box::new(move |x| m.predict(x))
                }
            };
            for i in folds.test_indices(fold) {
                predicted[i] = predict(&data.features[i].to_array());
            }
        }
        scores.push(Confusion::from_labels(&predicted, &data.labels).f1().unwrap_or(0.0));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(GridResult { member, best, scores })
}

/// Acquisition condition simulated for the robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal,
    Under,
    Over,
    Obscured,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Normal, Condition::Under, Condition::Over, Condition::Obscured];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Under => "under",
            Condition::Over => "over",
            Condition::Obscured => "obscured",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Condition::Normal),
            "under" | "underexposed" => Ok(Condition::Under),
            "over" | "overexposed" => Ok(Condition::Over),
            "obscured" | "obstructed" => Ok(Condition::Obscured),
            _ => Err(Error::param("condition", "expected normal, under, over or obscured")),
        }
    }
}

pub const UNDER_GAMMA: (f64, f64) = (0.2, 0.5);
pub const OVER_GAMMA: (f64, f64) = (2.0, 5.0);
/// Noise standard deviation range after the gamma change, 8-bit scale.
pub const NOISE_SIGMA: (f64, f64) = (0.0, 10.0);

/// What [`corrupt`] drew, for audit trails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub condition: Condition,
    pub seed: u64,
    pub gamma: Option<f64>,
    pub noise_sigma: Option<f64>,
}

/// Applies `condition` to `image`. Exposure changes draw gamma and a noise
/// level; obstruction paints over the ellipse fitted to `thorax`.
pub fn corrupt(
    image: &GrayImage,
    condition: Condition,
    thorax: &BinaryMask,
    seed: u64,
) -> Result<(GrayImage, CorruptionRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut record = CorruptionRecord { condition, seed, gamma: None, noise_sigma: None };
    let out = match condition {
        Condition::Normal => image.clone(),
        Condition::Under | Condition::Over => {
            let (lo, hi) = if condition == Condition::Under { UNDER_GAMMA } else { OVER_GAMMA };
            let gamma = rng.random_range(lo..=hi);
            let sigma = rng.random_range(NOISE_SIGMA.0..=NOISE_SIGMA.1);
            record.gamma = Some(gamma);
            record.noise_sigma = Some(sigma);
            raster::add_gaussian_noise(&raster::gamma_transform(image, gamma)?, sigma, rng.random())?
        }
        Condition::Obscured => raster::obstruct(image, &fit_ellipse(thorax)?, rng.random())?,
    };
    Ok((out, record))
}

/// Smoothing applied before thresholding radiographs.
pub const RIB_SEGMENTER_BLUR: f64 = 1.5;

/// Percentile of the smoothed spine intensities taken as the bone level.
/// Kept low so an occluder over part of the spine does not raise it.
pub const SPINE_LEVEL_PERCENTILE: f64 = 0.25;

/// Stand-in rib segmenter for radiographs. Bone intensity is read off the
/// spine mask and background off the frame border; pixels brighter than the
/// geometric mean of the two, outside the spine, are ribs. A gamma change
/// maps that cut onto the same pre-exposure intensity.
pub fn segment_ribs_from_image(image: &GrayImage, spine: &BinaryMask) -> Result<BinaryMask> {
    if (image.width(), image.height()) != (spine.width(), spine.height()) {
        return Err(Error::DimensionMismatch(image.width(), image.height(), spine.width(), spine.height()));
    }
    if spine.is_empty() {
        return Err(Error::EmptyMask("spine mask"));
    }
    let (w, h) = (image.width(), image.height());
    let smooth = image.blurred(RIB_SEGMENTER_BLUR);
    let mut bone: Vec<f64> = spine.members().map(|(x, y)| smooth.get(x, y)).collect();
    let bone_level = percentile(&mut bone, SPINE_LEVEL_PERCENTILE);
    let mut border: Vec<f64> = (0..w)
        .flat_map(|x| [(x, 0), (x, h - 1)])
        .chain((1..h.saturating_sub(1)).flat_map(|y| [(0, y), (w - 1, y)]))
        .map(|(x, y)| smooth.get(x, y))
        .collect();
    let background = percentile(&mut border, 0.5);
    let cut = (bone_level.max(LEVEL_FLOOR) * background.max(LEVEL_FLOOR)).sqrt();
    Ok(BinaryMask::from_fn(w, h, |x, y| smooth.get(x, y) > cut && !spine.get(x, y)))
}

/// Keeps the geometric mean defined on black frames.
const LEVEL_FLOOR: f64 = 1e-6;

/// Nearest-rank percentile, `q` in [0, 1]; reorders `values`.
fn percentile(values: &mut [f64], q: f64) -> f64 {
    let k = ((values.len() - 1) as f64 * q).round() as usize;
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Segments hemithoraces from a radiograph and a spine mask under
/// `condition`. The thorax fitted for the obstruction is `truth`'s union.
pub fn segment_under_condition(
    image: &GrayImage,
    spine_mask: &BinaryMask,
    spine: &SpineLine,
    truth: &HemithoraxPair,
    condition: Condition,
    params: &SnakeParams,
    seed: u64,
) -> Result<(HemithoraxPair, CorruptionRecord)> {
    let thorax = truth.left.union(&truth.right)?;
    let (corrupted, record) = corrupt(image, condition, &thorax, seed)?;
    let ribs = segment_ribs_from_image(&corrupted, spine_mask)?;
    if ribs.is_empty() {
        return Err(Error::EmptyMask("segmented rib mask"));
    }
    Ok((segment_with_spine(&ribs, spine, params, SnakeMode::OneSnake)?, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub mean_iou: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    /// Mean over pairs of the mean left/right IoU.
    pub mean_iou: f64,
    pub n_pairs: usize,
    pub per_pair: Vec<f64>,
    pub per_condition: BTreeMap<Condition, ConditionSummary>,
}

/// Mean hemithorax IoU, overall and per condition tag.
pub fn segmentation_iou_report(
    predicted: &[HemithoraxPair],
    truth: &[HemithoraxPair],
    conditions: &[Condition],
) -> Result<SegmentationSummary> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    if conditions.len() != truth.len() {
        return Err(Error::LengthMismatch(conditions.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(Error::param("predicted", "need at least one pair"));
    }
    let mut per_pair = Vec::with_capacity(predicted.len());
    let mut sums: BTreeMap<Condition, (f64, usize)> = BTreeMap::new();
    for ((p, t), c) in predicted.iter().zip(truth).zip(conditions) {
        check_same_frame(&p.left, &t.left)?;
        check_same_frame(&p.right, &t.right)?;
        let iou = (mask_iou(&p.left, &t.left)? + mask_iou(&p.right, &t.right)?) / 2.0;
        per_pair.push(iou);
        let e = sums.entry(*c).or_insert((0.0, 0));
        e.0 += iou;
        e.1 += 1;
    }
    Ok(SegmentationSummary {
        mean_iou: per_pair.iter().sum::<f64>() / per_pair.len() as f64,
        n_pairs: per_pair.len(),
        per_pair,
        per_condition: sums
            .into_iter()
            .map(|(c, (s, n))| (c, ConditionSummary { mean_iou: s / n as f64, n_pairs: n }))
            .collect(),
    })
}
