use std::sync::{Arc, OnceLock};

use image::RgbImage;
use rayon::prelude::*;

use super::dataset::Dataset;
use super::imageops::{resize, AugmentPolicy};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Shape, Tensor};

/// Stack equally sized images into an (N, 3, H, W) tensor scaled to [0, 1].
pub fn normalize_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::param("cannot build a tensor from zero images"));
    };
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (i, img) in images.iter().enumerate() {
        let (iw, ih) = img.dimensions();
        if iw != w {
            return Err(Error::dim("normalize_to_tensor", "width", w as usize, iw as usize));
        }
        if ih != h {
            return Err(Error::dim("normalize_to_tensor", "height", h as usize, ih as usize));
        }
        let base = i * 3 * plane;
        for (p, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = px[c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(Shape::new(images.len(), 3, h as usize, w as usize), data)
}

/// Index batches over `len` items. Shuffled order comes from `seed`; the
/// final batch may be short.
pub fn batch_indices(len: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    if len == 0 {
        return Err(Error::param("cannot batch an empty dataset"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        Prng::new(seed).shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Turns dataset samples into model-ready tensors at a fixed input size.
/// Resized pixels are cached so later epochs skip decoding.
pub struct Loader<'a> {
    dataset: &'a Dataset,
    width: u32,
    height: u32,
    augment: Option<AugmentPolicy>,
    cache: Option<Vec<OnceLock<Arc<RgbImage>>>>,
}

impl<'a> Loader<'a> {
    pub fn new(dataset: &'a Dataset, width: u32, height: u32) -> Self {
        Self {
            dataset,
            width,
            height,
            augment: None,
            cache: Some((0..dataset.len()).map(|_| OnceLock::new()).collect()),
        }
    }

    pub fn with_augment(mut self, policy: AugmentPolicy) -> Self {
        self.augment = (!policy.is_identity()).then_some(policy);
        self
    }

    /// Decode on every access instead of caching resized images.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Resized, un-augmented image for sample `i`.
    pub fn image(&self, i: usize) -> Result<Arc<RgbImage>> {
        let load = || -> Result<Arc<RgbImage>> {
            let raw = self.dataset.samples[i].load()?;
            if raw.dimensions() == (self.width, self.height) {
                Ok(raw)
            } else {
                Ok(Arc::new(resize(&raw, self.width, self.height)?))
            }
        };
        match &self.cache {
            None => load(),
            Some(cache) => {
                if let Some(img) = cache[i].get() {
                    return Ok(Arc::clone(img));
                }
                let img = load()?;
                Ok(Arc::clone(cache[i].get_or_init(|| img)))
            }
        }
    }

    /// Tensor and labels for the given sample indices. With an augment
    /// policy and `augment_seed`, each sample gets its own derived stream so
    /// results do not depend on thread scheduling.
    pub fn batch(&self, indices: &[usize], augment_seed: Option<u64>) -> Result<(Tensor, Vec<usize>)> {
        let images = indices
            .par_iter()
            .map(|&i| {
                let img = self.image(i)?;
                match (&self.augment, augment_seed) {
                    (Some(policy), Some(seed)) => {
                        let mut rng = Prng::derive(seed, i as u64);
                        Ok(Arc::new(policy.apply(&img, &mut rng)?))
                    }
                    _ => Ok(img),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RgbImage> = images.iter().map(|a| a.as_ref()).collect();
        let labels = indices.iter().map(|&i| self.dataset.samples[i].class_index).collect();
        Ok((normalize_to_tensor(&refs)?, labels))
    }

    /// Iterate the dataset in batches. `epoch_seed` drives both shuffling
    /// and augmentation.
    pub fn batches(&self, batch_size: usize, shuffle: bool, epoch_seed: u64) -> Result<BatchIter<'_, 'a>> {
        Ok(BatchIter {
            loader: self,
            order: batch_indices(self.len(), batch_size, shuffle, epoch_seed)?.into_iter(),
            augment_seed: Prng::derive(epoch_seed, 0xa06).next_u64(),
        })
    }
}

pub struct BatchIter<'l, 'a> {
    loader: &'l Loader<'a>,
    order: std::vec::IntoIter<Vec<usize>>,
    augment_seed: u64,
}

impl Iterator for BatchIter<'_, '_> {
    type Item = Result<(Tensor, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.order.next()?;
        Some(self.loader.batch(&idx, Some(self.augment_seed)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

impl ExactSizeIterator for BatchIter<'_, '_> {}

/// Materialize `copies` augmented variants of every sample, kept in memory
/// after the originals.
pub fn materialize(dataset: &Dataset, policy: &AugmentPolicy, copies: usize, seed: u64) -> Result<Dataset> {
    policy.validate()?;
    let mut samples = dataset.samples.clone();
    for copy in 0..copies {
        let extra = dataset
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = Prng::derive(seed, (copy * dataset.len() + i) as u64);
                let img = policy.apply(&*s.load()?, &mut rng)?;
                let path = s.path.with_file_name(format!(
                    "{}_aug{copy}.png",
                    s.path.file_stem().and_then(|x| x.to_str()).unwrap_or("sample")
                ));
                Ok(super::dataset::Sample::in_memory(path, s.class_index, img))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.extend(extra);
    }
    Dataset::new(dataset.class_names.clone(), samples)
}
