//! The `thorax` command-line tool.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thorax_core::classify::{self, Label};
use thorax_core::eval::{self, Condition, CorruptionRecord};
use thorax_core::features::{extract_features, shape_stats, ShapeStats};
use thorax_core::hemithorax::{fit_region, fit_spine_midline, segment_with_spine, SnakeMode, SpineLine};
use thorax_core::phantom::PhantomRanges;
use thorax_core::{Side, SnakeParams};

use crate::config::{config_or_default, write_json, PipelineConfig};
use crate::corpus::write_corpus;
use crate::error::{exit, IoError, IoResult};
use crate::imageio::{load_gray, load_mask, save_gray, save_mask};
use crate::manifest::Manifest;
use crate::pipeline::{cross_validate, manifest_features, run_robustness_experiment, wall_clock};
use crate::tables::{features_csv, load_model, read_features, save_model, to_dataset, write_features, FeatureRow};

#[derive(Debug, Parser)]
#[command(name = "thorax", version, about = "Hemithorax segmentation and symmetry classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the snake to a rib mask and split it into hemithorax masks.
    Segment(SegmentArgs),
    /// Extract the seven symmetry features.
    Features(FeaturesArgs),
    /// Train the SVM/MLP/GBC ensemble on a feature table.
    Train(TrainArgs),
    /// Classify masks or feature rows with a trained model.
    Classify(ClassifyArgs),
    /// Simulate under/overexposure or an obstruction on a radiograph.
    Corrupt(CorruptArgs),
    /// Cross-validate the classifier, or run the robustness experiment with --condition.
    Evaluate(EvaluateArgs),
    /// Generate a labeled phantom corpus.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct MaskInputs {
    /// Rib segmentation mask.
    #[arg(long)]
    pub ribs: Option<PathBuf>,
    /// Spine segmentation mask.
    #[arg(long)]
    pub spine: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, required = true)]
    pub ribs: PathBuf,
    #[arg(long, required = true)]
    pub spine: PathBuf,
    /// one-snake or two-snake.
    #[arg(long)]
    pub mode: Option<SnakeMode>,
    /// Snake parameters or pipeline configuration (JSON).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Output prefix; files are `<prefix>_left.png`, `<prefix>_right.png` and `<prefix>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for outputs named after the rib mask (ignored with --out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub masks: MaskInputs,
    /// Dataset manifest; every row is segmented.
    #[arg(long, conflicts_with_all = ["ribs", "spine"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Feature CSV to write (standard output if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled feature CSV.
    #[arg(long)]
    pub features: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; one `id label score` line per row.
    #[arg(long, conflicts_with_all = ["ribs", "spine"])]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub masks: MaskInputs,
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// normal, under, over or obscured.
    #[arg(long, visible_alias = "condition")]
    pub mode: Condition,
    /// Rib mask whose snake-fitted thorax positions the obstruction.
    #[arg(long)]
    pub ribs: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupted PNG to write; a `.json` record of the draw goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labeled feature CSV.
    #[arg(long, conflicts_with = "manifest")]
    pub features: Option<PathBuf>,
    /// Dataset manifest; rows are segmented before cross-validation.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run the robustness experiment under this condition instead (needs --manifest).
    #[arg(long, requires = "manifest")]
    pub condition: Option<Condition>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Report JSON to write (standard output if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub asym_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sampling ranges (JSON); defaults otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> IoResult<()> {
    match command {
        Command::Segment(a) => segment(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Classify(a) => classify(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Phantom(a) => phantom(a),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, why: &str) -> IoResult<&'a Path> {
    value.as_deref().ok_or_else(|| IoError::Usage(format!("--{flag} is required {why}")))
}

#[derive(Serialize)]
struct SegmentSidecar<'a> {
    ribs: &'a Path,
    spine: &'a Path,
    mode: SnakeMode,
    params: SnakeParams,
    spine_line: SpineLine,
    left: ShapeStats,
    right: ShapeStats,
    timing: Timing,
}

#[derive(Serialize)]
struct Timing {
    load_seconds: f64,
    segment_seconds: f64,
    total_seconds: f64,
}

fn segment(a: SegmentArgs) -> IoResult<()> {
    let mut clock = wall_clock();
    let mut config = config_or_default(a.params.as_deref())?;
    if let Some(mode) = a.mode {
        config.mode = mode;
    }
    let prefix = match (&a.out, &a.out_dir) {
        (Some(p), _) => p.clone(),
        (None, dir) => dir.clone().unwrap_or_default().join(stem_id(&a.ribs)),
    };
    let ribs = load_mask(&a.ribs, config.mask_threshold)?;
    let spine_mask = load_mask(&a.spine, config.mask_threshold)?;
    if (ribs.width(), ribs.height()) != (spine_mask.width(), spine_mask.height()) {
        return Err(IoError::Usage(format!(
            "rib mask is {}x{} but spine mask is {}x{}",
            ribs.width(),
            ribs.height(),
            spine_mask.width(),
            spine_mask.height()
        )));
    }
    let loaded = clock();
    let spine = fit_spine_midline(&spine_mask).map_err(|e| IoError::core(a.spine.display(), e))?;
    let pair = segment_with_spine(&ribs, &spine, &config.snake, config.mode)
        .map_err(|e| IoError::core(a.ribs.display(), e))?;
    let segmented = clock();
    let left = shape_stats(&pair.left, &spine, Side::Left).map_err(|e| IoError::core("left hemithorax", e))?;
    let right = shape_stats(&pair.right, &spine, Side::Right).map_err(|e| IoError::core("right hemithorax", e))?;
    create_parent(&prefix)?;
    save_mask(&with_suffix(&prefix, "_left.png"), &pair.left)?;
    save_mask(&with_suffix(&prefix, "_right.png"), &pair.right)?;
    let timing = Timing { load_seconds: loaded, segment_seconds: segmented - loaded, total_seconds: clock() };
    write_json(
        &with_suffix(&prefix, ".json"),
        &SegmentSidecar {
            ribs: &a.ribs,
            spine: &a.spine,
            mode: config.mode,
            params: config.snake,
            spine_line: spine,
            left,
            right,
            timing,
        },
    )
}

fn create_parent(path: &Path) -> IoResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e)),
        None => Ok(()),
    }
}

/// File stem with a trailing `_ribs` (or similar mask suffix) removed.
fn stem_id(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    for suffix in ["_ribs", "_mask"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn single_row(masks: &MaskInputs, config: &PipelineConfig) -> IoResult<FeatureRow> {
    let ribs_path = require(&masks.ribs, "ribs", "without --manifest or --features")?;
    let spine_path = require(&masks.spine, "spine", "with --ribs")?;
    let ribs = load_mask(ribs_path, config.mask_threshold)?;
    let spine = load_mask(spine_path, config.mask_threshold)?;
    let pair = thorax_core::hemithorax::segment_hemithoraces(&ribs, &spine, &config.snake, config.mode)
        .map_err(|e| IoError::core(ribs_path.display(), e))?;
    let features = extract_features(&pair).map_err(|e| IoError::core(ribs_path.display(), e))?;
    Ok(FeatureRow { id: stem_id(ribs_path), features, label: None })
}

fn features(a: FeaturesArgs) -> IoResult<()> {
    let config = config_or_default(a.params.as_deref())?;
    let rows = match &a.manifest {
        Some(m) => manifest_features(&Manifest::load(m)?, &config, a.workers)?,
        None => vec![single_row(&a.masks, &config)?],
    };
    match &a.out {
        Some(out) => create_parent(out).and_then(|()| write_features(out, &rows)),
        None => {
            std::io::stdout().lock().write_all(&features_csv(&rows)).map_err(|e| IoError::io(Path::new("<stdout>"), e))
        }
    }
}

fn train(a: TrainArgs) -> IoResult<()> {
    let config = config_or_default(a.params.as_deref())?;
    let rows = read_features(&a.features)?;
    let data = to_dataset(&a.features, &rows)?;
    let model = classify::train_ensemble(&data, &config.classifier, a.seed)
        .map_err(|e| IoError::core(a.features.display(), e))?;
    create_parent(&a.model)?;
    save_model(&a.model, &model)
}

fn classify(a: ClassifyArgs) -> IoResult<()> {
    let model = load_model(&a.model)?;
    let predict = |row: &FeatureRow| {
        classify::predict(&model, &row.features).map_err(|e| IoError::core(format!("row `{}`", row.id), e))
    };
    let mut out = std::io::stdout().lock();
    let mut emit = |line: String| writeln!(out, "{line}").map_err(|e| IoError::io(Path::new("<stdout>"), e));
    match &a.features {
        Some(path) => {
            for row in read_features(path)? {
                let p = predict(&row)?;
                emit(format!("{} {} {}", row.id, p.label, p.score))?;
            }
        }
        None => {
            let config = config_or_default(a.params.as_deref())?;
            let p = predict(&single_row(&a.masks, &config)?)?;
            emit(format!("{} {}", p.label, p.score))?;
        }
    }
    Ok(())
}

fn corrupt(a: CorruptArgs) -> IoResult<()> {
    let image = load_gray(&a.image)?;
    let thorax = match (a.mode, &a.ribs) {
        (Condition::Obscured, None) => {
            return Err(IoError::Usage("--ribs is required to place the obstruction".into()));
        }
        (Condition::Obscured, Some(ribs_path)) => {
            let config = config_or_default(a.params.as_deref())?;
            let ribs = load_mask(ribs_path, config.mask_threshold)?;
            fit_region(&ribs, &config.snake).map_err(|e| IoError::core(ribs_path.display(), e))?
        }
        _ => thorax_core::BinaryMask::new(image.width(), image.height()),
    };
    let (out, record): (_, CorruptionRecord) =
        eval::corrupt(&image, a.mode, &thorax, a.seed).map_err(|e| IoError::core(a.image.display(), e))?;
    create_parent(&a.out)?;
    save_gray(&a.out, &out)?;
    write_json(&a.out.with_extension("json"), &record)
}

fn evaluate(a: EvaluateArgs) -> IoResult<()> {
    let config = config_or_default(a.params.as_deref())?;
    let emit = |value: &dyn erased::Json| -> IoResult<()> {
        match &a.out {
            Some(out) => create_parent(out).and_then(|()| value.write(out)),
            None => {
                println!("{}", value.to_string_pretty());
                Ok(())
            }
        }
    };
    if let Some(condition) = a.condition {
        let manifest = Manifest::load(require(&a.manifest, "manifest", "with --condition")?)?;
        let report = run_robustness_experiment(&manifest, condition, &config, a.seed, a.workers)?;
        eprintln!("{condition}: mean IoU {:.4} over {} pairs", report.mean_iou, report.n_pairs);
        return emit(&report);
    }
    let rows = match (&a.features, &a.manifest) {
        (Some(path), _) => read_features(path)?,
        (None, Some(m)) => manifest_features(&Manifest::load(m)?, &config, a.workers)?,
        (None, None) => return Err(IoError::Usage("--features or --manifest is required".into())),
    };
    let source = a.features.as_ref().or(a.manifest.as_ref()).expect("one input");
    let data = to_dataset(source, &rows)?;
    let report = cross_validate(&data, a.folds, &config, a.seed)?;
    for m in &report.overall_pooled {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        eprintln!(
            "{:<8} precision {} recall {} f1 {} auc {}",
            m.model,
            pct(m.metrics.precision),
            pct(m.metrics.recall),
            pct(m.metrics.f1),
            pct(m.metrics.auc)
        );
    }
    emit(&report)
}

fn phantom(a: PhantomArgs) -> IoResult<()> {
    let ranges: PhantomRanges = match &a.params {
        Some(p) => crate::config::read_json(p)?,
        None => PhantomRanges::default(),
    };
    let manifest = write_corpus(&a.out_dir, a.n, a.asym_fraction, a.seed, &ranges, a.workers)?;
    let labels = Manifest::load(&manifest)?.rows.iter().filter(|r| r.label == Some(Label::Asymmetric)).count();
    eprintln!("wrote {} phantoms ({labels} asymmetric) to {}", a.n, manifest.display());
    Ok(())
}

/// Reports of different types written through one path.
mod erased {
    use std::path::Path;

    use serde::Serialize;

    use crate::error::IoResult;

    pub trait Json {
        fn write(&self, path: &Path) -> IoResult<()>;
        fn to_string_pretty(&self) -> String;
    }

    impl<T: Serialize> Json for T {
        fn write(&self, path: &Path) -> IoResult<()> {
            crate::config::write_json(path, self)
        }

        fn to_string_pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("serializable")
        }
    }
}
