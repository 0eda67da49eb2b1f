//! Dataset manifests: JSON arrays of rows whose paths are relative to the
//! manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thorax_core::classify::Label;

use crate::config::{read_json, write_json};
use crate::error::{IoError, IoResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub id: String,
    pub image: PathBuf,
    pub ribs_mask: PathBuf,
    pub spine_mask: PathBuf,
    #[serde(default, with = "label_code", skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// Ground-truth hemithoraces, needed by the robustness experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_mask: Option<PathBuf>,
}

/// Labels as 0/1; names are accepted on input.
mod label_code {
    use super::*;

    pub fn serialize<S: Serializer>(label: &Option<Label>, s: S) -> Result<S::Ok, S::Error> {
        match label {
            Some(l) => s.serialize_u8(l.as_u8()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Label>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(u8),
            Name(String),
        }
        let raw: Option<Raw> = Option::deserialize(d)?;
        raw.map(|r| match r {
            Raw::Code(c) => {
                Label::from_u8(c).ok_or_else(|| serde::de::Error::custom(format!("label {c} is not 0 or 1")))
            }
            Raw::Name(n) => n.parse().map_err(|_| serde::de::Error::custom(format!("unknown label `{n}`"))),
        })
        .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the row paths are relative to.
    pub base: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: &Path) -> IoResult<Self> {
        let rows: Vec<ManifestRow> = read_json(path)?;
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if !seen.insert(row.id.as_str()) {
                return Err(IoError::parse(path, format!("duplicate id `{}`", row.id)));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { base, rows })
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        write_json(path, &self.rows)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    /// Fails naming every referenced file that does not exist.
    pub fn check_files(&self, need_truth: bool) -> IoResult<()> {
        let mut missing = Vec::new();
        for row in &self.rows {
            let mut paths = vec![Some(&row.image), Some(&row.ribs_mask), Some(&row.spine_mask)];
            if need_truth {
                paths.extend([row.left_mask.as_ref(), row.right_mask.as_ref()]);
            }
            for p in paths {
                match p {
                    Some(p) if self.resolve(p).is_file() => {}
                    Some(p) => missing.push(self.resolve(p)),
                    None => missing.push(PathBuf::from(format!("<{}: ground-truth mask not listed>", row.id))),
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(IoError::MissingFiles(missing))
        }
    }
}
