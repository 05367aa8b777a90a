//! Labeled dataset loading: a JSON manifest naming class order and files,
//! plus per-instance CSV amplitude matrices.

use super::IngestError;
use crate::csi::AmplitudeWindow;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Feature count of the reference 3x1x30 antenna geometry.
pub const DEFAULT_FEATURES: usize = 90;
/// Capture rate assumed when a manifest does not declare one.
pub const DEFAULT_SAMPLE_RATE: f64 = 1000.0;

/// On-disk manifest shape (`manifest.json` next to the CSV files).
#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    class_names: Vec<String>,
    #[serde(default)]
    sample_rate: Option<f64>,
    #[serde(default)]
    n_features: Option<usize>,
    files: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    class: usize,
}

/// A resolved dataset description: ordered class names and labeled files.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub sample_rate: f64,
    pub n_features: usize,
    /// (absolute path, class id); class ids index `class_names`.
    pub files: Vec<(PathBuf, usize)>,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Instances per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for (_, c) in &self.files {
            counts[*c] += 1;
        }
        counts
    }
}

/// Read and validate a manifest file. Class ids must be dense in
/// `[0, n_classes)`; file paths resolve relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: ManifestFile =
        serde_json::from_str(&text).map_err(|e| IngestError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let bad = |reason: String| IngestError::Manifest {
        path: path.to_path_buf(),
        reason,
    };

    if parsed.class_names.is_empty() {
        return Err(bad("manifest declares no classes".into()));
    }
    let n_classes = parsed.class_names.len();
    let mut used = vec![false; n_classes];
    for e in &parsed.files {
        if e.class >= n_classes {
            return Err(bad(format!(
                "file {} has class id {} but only {} classes are declared",
                e.path, e.class, n_classes
            )));
        }
        used[e.class] = true;
    }
    if !parsed.files.is_empty() {
        if let Some(unused) = used.iter().position(|u| !u) {
            return Err(bad(format!(
                "class id {unused} ({}) has no files; ids must be dense",
                parsed.class_names[unused]
            )));
        }
    }

    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(DatasetManifest {
        class_names: parsed.class_names,
        sample_rate: parsed.sample_rate.unwrap_or(DEFAULT_SAMPLE_RATE),
        n_features: parsed.n_features.unwrap_or(DEFAULT_FEATURES),
        files: parsed
            .files
            .into_iter()
            .map(|e| (root.join(e.path), e.class))
            .collect(),
        root,
    })
}

/// Serialize a manifest back to its on-disk JSON shape.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    let root = path.parent().unwrap_or(Path::new("."));
    let file = ManifestFile {
        class_names: manifest.class_names.clone(),
        sample_rate: Some(manifest.sample_rate),
        n_features: Some(manifest.n_features),
        files: manifest
            .files
            .iter()
            .map(|(p, c)| ManifestEntry {
                path: p
                    .strip_prefix(root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned(),
                class: *c,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load every instance file as one raw labeled window, in manifest order.
pub fn load_csv_dataset(manifest: &DatasetManifest) -> Result<Vec<AmplitudeWindow>, IngestError> {
    manifest
        .files
        .iter()
        .map(|(path, class)| {
            let mut w = load_csv_window(path, manifest.n_features, manifest.sample_rate)?;
            w.label = Some(*class);
            Ok(w)
        })
        .collect()
}

/// Parse one CSV instance file into an unlabeled window. Each row holds
/// `n_features` amplitudes, optionally preceded by a timestamp column;
/// the extra column is detected by column count and dropped.
pub fn load_csv_window(
    path: &Path,
    n_features: usize,
    sample_rate: f64,
) -> Result<AmplitudeWindow, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, reason: String| IngestError::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut has_timestamp: Option<bool> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let ts = *has_timestamp.get_or_insert_with(|| cells.len() == n_features + 1);
        let expected = n_features + ts as usize;
        if cells.len() != expected {
            return Err(err(
                line_no,
                format!("expected {expected} columns, found {}", cells.len()),
            ));
        }
        for cell in &cells[ts as usize..] {
            let v: f64 = cell.trim().parse().map_err(|_| {
                err(line_no, format!("non-numeric cell {:?}", cell.trim()))
            })?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite value {v}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(err(1, "file holds no data rows".into()));
    }

    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned());
    Ok(AmplitudeWindow {
        data,
        t: rows,
        f: n_features,
        sample_rate,
        label: None,
        source_id,
    })
}

/// Write one window as a CSV instance file (no timestamp column).
pub fn write_csv_window(window: &AmplitudeWindow, path: &Path) -> Result<(), IngestError> {
    let mut text = String::new();
    for ti in 0..window.t {
        let row = window.row(ti);
        for (fi, v) in row.iter().enumerate() {
            if fi > 0 {
                text.push(',');
            }
            // ryu-style shortest representation round-trips f64 exactly
            text.push_str(&format!("{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}
