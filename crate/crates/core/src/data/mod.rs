//! Image ingestion, splitting, preprocessing and batching.

mod batch;
mod dataset;
mod imageops;
mod manifest;
mod split;
mod synthetic;

pub use batch::{batch_indices, materialize, normalize_to_tensor, BatchIter, Loader};
pub use dataset::{decode_image, filter_min_resolution, load_image_folder, Dataset, Ingest, Sample, SkippedFile};
pub use imageops::{augment, resize, AugmentOp, AugmentPolicy};
pub use manifest::{ClassSummaryRow, Manifest, ManifestRow, MANIFEST_FILE, SUMMARY_FILE};
pub use split::{allocate, split, SplitRatios, Splits, Subset};
pub use synthetic::{generate as generate_synthetic, write_image_folder, SyntheticSpec};
