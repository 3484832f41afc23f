//! Dataset manifest: a JSON array of labeled feature-file records.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One dataset record. `label` is 0 (real) or 1 (fake); `interval` is the
/// manipulated span `[start, end)` when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interval: Option<(usize, usize)>,
}

impl ManifestEntry {
    pub fn is_real(&self) -> bool {
        self.label == 0
    }

    /// Resolves the entry's path relative to the manifest location.
    pub fn resolve(&self, manifest_path: &Path) -> PathBuf {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        base.join(&self.path)
    }
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| Error::MalformedFile { path: path.display().to_string(), reason: e.to_string() })?;
    std::fs::write(path, json + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| {
        Error::MalformedFile { path: path.display().to_string(), reason: e.to_string() }
    })?;
    for (i, e) in entries.iter().enumerate() {
        if e.label > 1 {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("record {i}: label {} is not 0 or 1", e.label),
            });
        }
        if let Some((s, en)) = e.interval {
            if s >= en {
                return Err(Error::MalformedFile {
                    path: path.display().to_string(),
                    reason: format!("record {i}: interval [{s}, {en}) is empty"),
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!("manifest {} has no records", path.display())));
    }
    Ok(entries)
}

/// Path of the activation file paired with a feature file:
/// `x.avsf` -> `x.act.avsf`.
pub fn activation_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("avsf");
    path.with_file_name(format!("{stem}.act.{ext}"))
}
