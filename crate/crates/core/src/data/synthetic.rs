use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::Prng;

/// Generated leaf-like images: each class has its own tint and stripe
/// orientation, with per-image phase, jitter and pixel noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub size: u32,
    pub seed: u64,
    /// Standard deviation of per-pixel noise, in 0..255 units.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, size: u32, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            size,
            seed,
            noise: 24.0,
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| c * 255.0)
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut Prng) -> RgbImage {
    let k = spec.classes as f64;
    let c = class as f64;
    // Leaf-like greens to yellows; neighbouring classes overlap in colour.
    let hue = 0.18 + 0.14 * c / k + rng.uniform(-0.03, 0.03);
    let base = hsv_to_rgb(hue, rng.uniform(0.45, 0.65), rng.uniform(0.55, 0.7));
    let angle = (c * 180.0 / k + rng.uniform(-8.0, 8.0)).to_radians();
    let freq = 2.0 + (class % 3) as f64 + rng.uniform(-0.2, 0.2);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let shift = rng.uniform(-15.0, 15.0);
    let size = spec.size as f64;
    let (sa, ca) = angle.sin_cos();
    let mut img = RgbImage::new(spec.size, spec.size);
    for y in 0..spec.size {
        for x in 0..spec.size {
            let u = (x as f64 * ca + y as f64 * sa) / size;
            let wave = 45.0 * (std::f64::consts::TAU * freq * u + phase).sin();
            let mut px = [0u8; 3];
            for (ch, out) in px.iter_mut().enumerate() {
                let v = base[ch] + wave + shift + spec.noise * rng.gaussian();
                *out = v.round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// In-memory synthetic dataset; sample paths are `class_XX/img_NNNNN.png`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.size == 0 {
        return Err(Error::param("synthetic dataset needs classes, samples and size > 0"));
    }
    let names: Vec<String> = (0..spec.classes).map(|c| format!("class_{c:02}")).collect();
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, name) in names.iter().enumerate() {
        for i in 0..spec.per_class {
            let mut rng = Prng::derive(spec.seed, (class * spec.per_class + i) as u64);
            let img = render(spec, class, &mut rng);
            samples.push(Sample::in_memory(PathBuf::from(format!("{name}/img_{i:05}.png")), class, img));
        }
    }
    Dataset::new(names, samples)
}

/// Write a generated dataset as PNG files under `root`, one folder per class.
pub fn write_image_folder(dataset: &Dataset, root: &Path) -> Result<()> {
    for s in &dataset.samples {
        let path = root.join(&s.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        s.load()?.save(&path)?;
    }
    Ok(())
}
