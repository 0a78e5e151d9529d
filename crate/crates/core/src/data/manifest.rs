use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use super::split::{Splits, Subset};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "split_manifest.csv";
pub const SUMMARY_FILE: &str = "class_summary.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    #[serde(rename = "classIndex")]
    pub class_index: usize,
    pub subset: Subset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSummaryRow {
    #[serde(rename = "classIndex")]
    pub class_index: usize,
    #[serde(rename = "className")]
    pub class_name: String,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// A persisted split: class list plus one row per sample. Paths are stored
/// relative to the data root with `/` separators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub rows: Vec<ManifestRow>,
}

fn relative(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl Manifest {
    pub fn from_splits(splits: &Splits, root: &Path) -> Self {
        let mut rows = Vec::new();
        for subset in Subset::ALL {
            for s in &splits.get(subset).samples {
                rows.push(ManifestRow {
                    path: relative(&s.path, root),
                    class_index: s.class_index,
                    subset,
                });
            }
        }
        Self {
            class_names: splits.train.class_names.clone(),
            rows,
        }
    }

    pub fn summary(&self) -> Vec<ClassSummaryRow> {
        let mut out: Vec<ClassSummaryRow> = self
            .class_names
            .iter()
            .enumerate()
            .map(|(i, n)| ClassSummaryRow {
                class_index: i,
                class_name: n.clone(),
                total: 0,
                train: 0,
                val: 0,
                test: 0,
            })
            .collect();
        for r in &self.rows {
            let s = &mut out[r.class_index];
            s.total += 1;
            match r.subset {
                Subset::Train => s.train += 1,
                Subset::Val => s.val += 1,
                Subset::Test => s.test += 1,
            }
        }
        out
    }

    /// Write the manifest and class summary CSVs into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
        for r in self.summary() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let corrupt = |file: &str, reason: String| Error::Ingestion {
            path: dir.join(file),
            reason,
        };
        let mut class_names = Vec::new();
        for (i, row) in csv::Reader::from_path(dir.join(SUMMARY_FILE))?
            .deserialize::<ClassSummaryRow>()
            .enumerate()
        {
            let row = row?;
            if row.class_index != i {
                return Err(corrupt(SUMMARY_FILE, format!("row {i} has class index {}", row.class_index)));
            }
            class_names.push(row.class_name);
        }
        let mut rows = Vec::new();
        for row in csv::Reader::from_path(dir.join(MANIFEST_FILE))?.deserialize::<ManifestRow>() {
            let row = row?;
            if row.class_index >= class_names.len() {
                return Err(corrupt(
                    MANIFEST_FILE,
                    format!("{} has class index {} of {}", row.path, row.class_index, class_names.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Self { class_names, rows })
    }

    /// Samples of one subset, resolved against `root`.
    pub fn dataset(&self, subset: Subset, root: &Path) -> Result<Dataset> {
        let samples = self
            .rows
            .iter()
            .filter(|r| r.subset == subset)
            .map(|r| Sample::from_path(root.join(PathBuf::from(&r.path)), r.class_index, None))
            .collect();
        Dataset::new(self.class_names.clone(), samples)
    }
}
