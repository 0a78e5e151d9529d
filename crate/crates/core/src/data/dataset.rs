use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone)]
pub struct Sample {
    pub path: PathBuf,
    pub class_index: usize,
    /// (width, height) when known from the file header or in-memory pixels.
    pub dims: Option<(u32, u32)>,
    pixels: Option<Arc<RgbImage>>,
}

impl Sample {
    pub fn from_path(path: PathBuf, class_index: usize, dims: Option<(u32, u32)>) -> Self {
        Self {
            path,
            class_index,
            dims,
            pixels: None,
        }
    }

    /// A sample whose pixels already live in memory; `path` is only a label.
    pub fn in_memory(path: PathBuf, class_index: usize, pixels: RgbImage) -> Self {
        Self {
            path,
            class_index,
            dims: Some(pixels.dimensions()),
            pixels: Some(Arc::new(pixels)),
        }
    }

    /// Decoded 8-bit RGB pixels.
    pub fn load(&self) -> Result<Arc<RgbImage>> {
        if let Some(p) = &self.pixels {
            return Ok(Arc::clone(p));
        }
        decode_image(&self.path).map(Arc::new)
    }
}

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .with_guessed_format()
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

/// Labeled images; class indices refer to `class_names`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.class_index >= class_names.len()) {
            return Err(Error::param(format!(
                "sample {} has class {} but only {} classes exist",
                s.path.display(),
                s.class_index,
                class_names.len()
            )));
        }
        Ok(Self { class_names, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_index).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }

    /// Samples at `indices`, sharing the class list.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            class_names: self.class_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Decode every file-backed sample now so later passes stay in memory.
    pub fn preload(&mut self) -> Result<()> {
        for s in &mut self.samples {
            if s.pixels.is_none() {
                let img = decode_image(&s.path)?;
                s.dims = Some(img.dimensions());
                s.pixels = Some(Arc::new(img));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Result of scanning a directory-per-class tree.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub dataset: Dataset,
    pub skipped: Vec<SkippedFile>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Scan `root/<class>/<image>` folders. Classes are the sorted subdirectory
/// names; samples are ordered by class, then file name. Unreadable or
/// non-image files are skipped and reported; a class left without images is
/// an error.
pub fn load_image_folder(root: &Path) -> Result<Ingest> {
    if !root.is_dir() {
        return Err(Error::Ingestion {
            path: root.to_path_buf(),
            reason: "data root is not a directory".into(),
        });
    }
    let mut class_dirs = Vec::new();
    let mut skipped = Vec::new();
    for p in sorted_entries(root)? {
        if p.is_dir() {
            class_dirs.push(p);
        } else {
            skipped.push(SkippedFile {
                path: p,
                reason: "file at data root is not inside a class folder".into(),
            });
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Ingestion {
            path: root.to_path_buf(),
            reason: "no class folders found".into(),
        });
    }
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    for (class_index, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Ingestion {
                path: dir.clone(),
                reason: "class folder name is not valid UTF-8".into(),
            })?
            .to_string();
        let before = samples.len();
        for p in sorted_entries(dir)? {
            if !p.is_file() {
                continue;
            }
            if !has_image_extension(&p) {
                log::warn!("skipping non-image file {}", p.display());
                skipped.push(SkippedFile {
                    path: p,
                    reason: "not a PNG/JPEG file".into(),
                });
                continue;
            }
            let dims = image::ImageReader::open(&p)
                .and_then(|r| r.with_guessed_format())
                .map_err(image::ImageError::IoError)
                .and_then(|r| r.into_dimensions());
            match dims {
                Ok(d) => samples.push(Sample::from_path(p, class_index, Some(d))),
                Err(e) => {
                    log::warn!("skipping unreadable image {}: {e}", p.display());
                    skipped.push(SkippedFile {
                        path: p,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if samples.len() == before {
            return Err(Error::Ingestion {
                path: dir.clone(),
                reason: format!("class '{name}' contains no readable images"),
            });
        }
        class_names.push(name);
    }
    Ok(Ingest {
        dataset: Dataset::new(class_names, samples)?,
        skipped,
    })
}

/// Drop samples whose shorter side is below `min_px`. `min_px = 0` keeps everything.
pub fn filter_min_resolution(dataset: &Dataset, min_px: u32) -> Result<Dataset> {
    if min_px == 0 {
        return Ok(dataset.clone());
    }
    let mut kept = Vec::new();
    for s in &dataset.samples {
        let (w, h) = match s.dims {
            Some(d) => d,
            None => s.load()?.dimensions(),
        };
        if w.min(h) >= min_px {
            kept.push(s.clone());
        }
    }
    Dataset::new(dataset.class_names.clone(), kept)
}
