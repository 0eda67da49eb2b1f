//! Phantom corpora on disk.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thorax_core::phantom::{self, CorpusEntry, PhantomRanges};

use crate::config::write_json;
use crate::error::{IoError, IoResult};
use crate::imageio::{save_gray, save_mask};
use crate::manifest::{Manifest, ManifestRow};
use crate::pipeline::thread_pool;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SPECS_NAME: &str = "phantoms.json";

#[derive(Serialize)]
struct SpecsDocument<'a> {
    n: usize,
    asym_fraction: f64,
    seed: u64,
    ranges: &'a PhantomRanges,
    phantoms: &'a [CorpusEntry],
}

/// Generates `n` phantoms into `out_dir` and writes `manifest.json` plus a
/// `phantoms.json` record of every sampled spec. Returns the manifest path.
pub fn write_corpus(
    out_dir: &Path,
    n: usize,
    asym_fraction: f64,
    seed: u64,
    ranges: &PhantomRanges,
    workers: usize,
) -> IoResult<PathBuf> {
    let plan = phantom::plan_corpus(n, asym_fraction, seed, ranges).map_err(|e| IoError::core("corpus plan", e))?;
    std::fs::create_dir_all(out_dir).map_err(|e| IoError::io(out_dir, e))?;
    let rows: Vec<ManifestRow> = thread_pool(workers)?
        .install(|| plan.par_iter().map(|entry| write_phantom(out_dir, entry)).collect::<IoResult<_>>())?;
    write_json(&out_dir.join(SPECS_NAME), &SpecsDocument { n, asym_fraction, seed, ranges, phantoms: &plan })?;
    let manifest_path = out_dir.join(MANIFEST_NAME);
    Manifest { base: out_dir.to_path_buf(), rows }.save(&manifest_path)?;
    Ok(manifest_path)
}

fn write_phantom(dir: &Path, entry: &CorpusEntry) -> IoResult<ManifestRow> {
    let p = phantom::generate(&entry.spec).map_err(|e| IoError::core(&entry.id, e))?;
    let name = |suffix: &str| PathBuf::from(format!("{}_{suffix}.png", entry.id));
    let row = ManifestRow {
        id: entry.id.clone(),
        image: name("img"),
        ribs_mask: name("ribs"),
        spine_mask: name("spine"),
        label: Some(p.label),
        left_mask: Some(name("left")),
        right_mask: Some(name("right")),
    };
    save_gray(&dir.join(&row.image), &p.radiograph)?;
    save_mask(&dir.join(&row.ribs_mask), &p.ribs)?;
    save_mask(&dir.join(&row.spine_mask), &p.spine)?;
    save_mask(&dir.join(name("left")), &p.truth.left)?;
    save_mask(&dir.join(name("right")), &p.truth.right)?;
    Ok(row)
}
