//! Manifest-level drivers: segmentation, feature extraction, cross-validation
//! and the robustness experiment.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thorax_core::classify::Dataset;
use thorax_core::eval::{
    self, derive_seed, Condition, ConditionSummary, CorruptionRecord, EvalReport, FoldPlan, RuntimeStats,
    SegmentationSummary,
};
use thorax_core::features::extract_features;
use thorax_core::hemithorax::{fit_spine_midline, segment_hemithoraces, HemithoraxPair};
use thorax_core::raster::mask_iou;

use crate::config::PipelineConfig;
use crate::error::{IoError, IoResult};
use crate::imageio::{load_gray, load_mask};
use crate::manifest::{Manifest, ManifestRow};
use crate::tables::FeatureRow;

/// Pool with `workers` threads; 0 picks the number of CPUs.
pub fn thread_pool(workers: usize) -> IoResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| IoError::Usage(format!("cannot start {workers} workers: {e}")))
}

/// Seconds since the clock was created.
pub fn wall_clock() -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64()
}

fn segment_row(manifest: &Manifest, row: &ManifestRow, config: &PipelineConfig) -> IoResult<HemithoraxPair> {
    let ribs = load_mask(&manifest.resolve(&row.ribs_mask), config.mask_threshold)?;
    let spine = load_mask(&manifest.resolve(&row.spine_mask), config.mask_threshold)?;
    segment_hemithoraces(&ribs, &spine, &config.snake, config.mode).map_err(|e| IoError::core(&row.id, e))
}

/// Segments every row and extracts its feature vector, in manifest order.
pub fn manifest_features(manifest: &Manifest, config: &PipelineConfig, workers: usize) -> IoResult<Vec<FeatureRow>> {
    manifest.check_files(false)?;
    thread_pool(workers)?.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let pair = segment_row(manifest, row, config)?;
                let features = extract_features(&pair).map_err(|e| IoError::core(&row.id, e))?;
                Ok(FeatureRow { id: row.id.clone(), features, label: row.label })
            })
            .collect()
    })
}

/// Stratified k-fold cross-validation of the ensemble.
pub fn cross_validate(data: &Dataset, folds: usize, config: &PipelineConfig, seed: u64) -> IoResult<EvalReport> {
    let plan: FoldPlan = eval::make_folds(data, folds, seed).map_err(|e| IoError::core("folds", e))?;
    let mut clock = wall_clock();
    eval::run_cv(data, &plan, &config.classifier, seed, &mut clock).map_err(|e| IoError::core("cross-validation", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub id: String,
    pub iou: f64,
    pub corruption: CorruptionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub condition: Condition,
    pub seed: u64,
    pub mean_iou: f64,
    pub n_pairs: usize,
    pub per_condition: BTreeMap<Condition, ConditionSummary>,
    pub rows: Vec<RobustnessRow>,
    pub runtime_stats: RuntimeStats,
}

impl RobustnessReport {
    pub fn summary(&self) -> SegmentationSummary {
        SegmentationSummary {
            mean_iou: self.mean_iou,
            n_pairs: self.n_pairs,
            per_pair: self.rows.iter().map(|r| r.iou).collect(),
            per_condition: self.per_condition.clone(),
        }
    }
}

/// Corrupts every radiograph with `condition`, segments ribs from it, fits
/// the snake and scores the hemithoraces against the ground-truth masks.
/// Row `i` uses corruption seed `derive_seed(seed, i)`.
pub fn run_robustness_experiment(
    manifest: &Manifest,
    condition: Condition,
    config: &PipelineConfig,
    seed: u64,
    workers: usize,
) -> IoResult<RobustnessReport> {
    manifest.check_files(true)?;
    let mut clock = wall_clock();
    let results: Vec<(HemithoraxPair, HemithoraxPair, CorruptionRecord)> = thread_pool(workers)?.install(|| {
        manifest
            .rows
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                let t = config.mask_threshold;
                let image = load_gray(&manifest.resolve(&row.image))?;
                let spine_mask = load_mask(&manifest.resolve(&row.spine_mask), t)?;
                let spine = fit_spine_midline(&spine_mask).map_err(|e| IoError::core(&row.id, e))?;
                let truth = HemithoraxPair {
                    left: load_mask(&manifest.resolve(row.left_mask.as_ref().expect("checked")), t)?,
                    right: load_mask(&manifest.resolve(row.right_mask.as_ref().expect("checked")), t)?,
                    spine,
                };
                let (pred, record) = eval::segment_under_condition(
                    &image,
                    &spine_mask,
                    &spine,
                    &truth,
                    condition,
                    &config.snake,
                    derive_seed(seed, i as u64),
                )
                .map_err(|e| IoError::core(&row.id, e))?;
                Ok((pred, truth, record))
            })
            .collect::<IoResult<_>>()
    })?;
    let (pred, truth): (Vec<_>, Vec<_>) = results.iter().map(|(p, t, _)| (p.clone(), t.clone())).unzip();
    let summary = eval::segmentation_iou_report(&pred, &truth, &vec![condition; pred.len()])
        .map_err(|e| IoError::core("IoU report", e))?;
    let rows = manifest
        .rows
        .iter()
        .zip(&summary.per_pair)
        .zip(&results)
        .map(|((row, &iou), r)| RobustnessRow { id: row.id.clone(), iou, corruption: r.2 })
        .collect();
    let total = clock();
    Ok(RobustnessReport {
        condition,
        seed,
        mean_iou: summary.mean_iou,
        n_pairs: summary.n_pairs,
        per_condition: summary.per_condition,
        rows,
        runtime_stats: RuntimeStats { train_seconds: 0.0, predict_seconds: total, total_seconds: total },
    })
}

/// Mean left/right IoU of two pairs.
pub fn pair_iou(a: &HemithoraxPair, b: &HemithoraxPair) -> thorax_core::Result<f64> {
    Ok((mask_iou(&a.left, &b.left)? + mask_iou(&a.right, &b.right)?) / 2.0)
}
