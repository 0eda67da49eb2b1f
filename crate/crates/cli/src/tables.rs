//! Feature tables (CSV) and trained model documents (JSON).

use std::path::Path;

use thorax_core::classify::{Dataset, Label, TrainedEnsemble, MODEL_SCHEMA_VERSION};
use thorax_core::features::FEATURE_NAMES;
use thorax_core::FeatureVector;

use crate::config::{read_json, write_json};
use crate::error::{IoError, IoResult};

pub const CSV_HEADER: [&str; 9] = [
    "id",
    "sim_area",
    "sim_perimeter",
    "sim_centroid_dx",
    "sim_first_rib_width",
    "hist_jsd",
    "hist_intersection",
    "reg_iou",
    "label",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub features: FeatureVector,
    pub label: Option<Label>,
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> IoResult<()> {
    std::fs::write(path, features_csv(rows)).map_err(|e| IoError::io(path, e))
}

/// The CSV document for `rows`.
pub fn features_csv(rows: &[FeatureRow]) -> Vec<u8> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(CSV_HEADER).expect("in-memory write");
    for row in rows {
        let mut rec = vec![row.id.clone()];
        // Display for f64 is the shortest string that parses back exactly
        rec.extend(row.features.to_array().iter().map(|v| v.to_string()));
        rec.push(row.label.map(|l| l.as_u8().to_string()).unwrap_or_default());
        out.write_record(&rec).expect("in-memory write");
    }
    out.into_inner().expect("in-memory flush")
}

/// Reads a feature table. The label column may be absent or empty.
pub fn read_features(path: &Path) -> IoResult<Vec<FeatureRow>> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = rdr.headers().map_err(|e| IoError::parse(path, e))?.iter().map(String::from).collect();
    let has_label = header == CSV_HEADER;
    if !has_label && header != CSV_HEADER[..8] {
        return Err(IoError::parse(path, format!("expected header `{}`", CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::parse(path, e))?;
        let line = i + 2;
        let mut a = [0.0; 7];
        for (k, slot) in a.iter_mut().enumerate() {
            let cell = rec.get(k + 1).unwrap_or("");
            *slot = cell.trim().parse().map_err(|_| {
                IoError::parse(path, format!("line {line}: {} is not a number: `{cell}`", FEATURE_NAMES[k]))
            })?;
        }
        let label = match rec.get(8).map(str::trim) {
            Some(cell) if has_label && !cell.is_empty() => Some(
                cell.parse::<Label>()
                    .map_err(|_| IoError::parse(path, format!("line {line}: label must be 0 or 1, got `{cell}`")))?,
            ),
            _ => None,
        };
        rows.push(FeatureRow {
            id: rec.get(0).unwrap_or("").to_string(),
            features: FeatureVector::from_array(a),
            label,
        });
    }
    Ok(rows)
}

/// Labeled rows as a training set; every row needs a label.
pub fn to_dataset(path: &Path, rows: &[FeatureRow]) -> IoResult<Dataset> {
    let mut data = Dataset::default();
    for row in rows {
        let label =
            row.label.ok_or_else(|| IoError::Usage(format!("{}: row `{}` has no label", path.display(), row.id)))?;
        data.push(row.id.clone(), row.features, label);
    }
    if data.is_empty() {
        return Err(IoError::Usage(format!("{}: no rows", path.display())));
    }
    Ok(data)
}

pub fn save_model(path: &Path, model: &TrainedEnsemble) -> IoResult<()> {
    write_json(path, model)
}

pub fn load_model(path: &Path) -> IoResult<TrainedEnsemble> {
    let value: serde_json::Value = read_json(path)?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(MODEL_SCHEMA_VERSION)) {
        return Err(IoError::parse(
            path,
            format!("unsupported model schema {version:?}, expected {MODEL_SCHEMA_VERSION}"),
        ));
    }
    serde_json::from_value(value).map_err(|e| IoError::parse(path, e))
}
