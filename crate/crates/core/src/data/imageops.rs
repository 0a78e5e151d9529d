use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;

/// Bilinear resize with pixel-center alignment and edge clamping.
/// Resizing to the same dimensions returns an exact copy.
pub fn resize(img: &RgbImage, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!("cannot resize to {width}x{height}")));
    }
    let (sw, sh) = img.dimensions();
    if sw == 0 || sh == 0 {
        return Err(Error::param("cannot resize an empty image"));
    }
    if (sw, sh) == (width, height) {
        return Ok(img.clone());
    }
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let cols: Vec<(u32, u32, f64)> = (0..width)
        .map(|x| axis_taps((x as f64 + 0.5) * sx - 0.5, sw))
        .collect();
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = axis_taps((y as f64 + 0.5) * sy - 0.5, sh);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let p00 = img.get_pixel(x0, y0);
            let p10 = img.get_pixel(x1, y0);
            let p01 = img.get_pixel(x0, y1);
            let p11 = img.get_pixel(x1, y1);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                px[c] = to_u8(top * (1.0 - fy) + bottom * fy);
            }
            out.put_pixel(x as u32, y, Rgb(px));
        }
    }
    Ok(out)
}

fn axis_taps(pos: f64, len: u32) -> (u32, u32, f64) {
    let max = (len - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as u32, i1 as u32, p - i0)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A single deterministic image transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum AugmentOp {
    /// Counter-clockwise rotation about the image center, in degrees.
    Rotation { degrees: f64 },
    /// Added to every channel, in 0..255 units.
    Brightness { delta: f64 },
    /// Scales deviation from mid-gray; must be positive.
    Contrast { factor: f64 },
    /// Forward 2x3 map from source to destination pixel coordinates.
    Affine { matrix: [[f64; 3]; 2] },
    /// Forward 3x3 homography from source to destination pixel coordinates.
    Perspective { matrix: [[f64; 3]; 3] },
}

/// Apply `op`. Geometric ops use inverse mapping with bilinear sampling;
/// pixels that map outside the source are black. Multiples of 90 degrees
/// are exact pixel permutations.
pub fn augment(img: &RgbImage, op: &AugmentOp) -> Result<RgbImage> {
    match op {
        AugmentOp::Rotation { degrees } => {
            if !degrees.is_finite() {
                return Err(Error::param("rotation angle must be finite"));
            }
            let turns = degrees / 90.0;
            if (turns - turns.round()).abs() < 1e-9 {
                return Ok(match (turns.round() as i64).rem_euclid(4) {
                    0 => img.clone(),
                    1 => imageops::rotate270(img),
                    2 => imageops::rotate180(img),
                    _ => imageops::rotate90(img),
                });
            }
            warp(img, &rotation_matrix(img, *degrees))
        }
        AugmentOp::Brightness { delta } => {
            if !delta.is_finite() {
                return Err(Error::param("brightness delta must be finite"));
            }
            Ok(map_channels(img, |v| v + delta))
        }
        AugmentOp::Contrast { factor } => {
            if !factor.is_finite() || *factor <= 0.0 {
                return Err(Error::param(format!("contrast factor must be positive, got {factor}")));
            }
            Ok(map_channels(img, |v| (v - 128.0) * factor + 128.0))
        }
        AugmentOp::Affine { matrix: m } => {
            let h = [m[0], m[1], [0.0, 0.0, 1.0]];
            warp(img, &h)
        }
        AugmentOp::Perspective { matrix } => warp(img, matrix),
    }
}

fn map_channels(img: &RgbImage, f: impl Fn(f64) -> f64) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = to_u8(f(p[c] as f64));
        }
    }
    out
}

fn rotation_matrix(img: &RgbImage, degrees: f64) -> [[f64; 3]; 3] {
    let (w, h) = img.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    // y grows downward, so a visual counter-clockwise turn flips the sine sign.
    [
        [c, s, cx - c * cx - s * cy],
        [-s, c, cy + s * cx - c * cy],
        [0.0, 0.0, 1.0],
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param("transform matrix has non-finite entries"));
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if det.abs() <= 1e-12 * scale.powi(3).max(1.0) {
        return Err(Error::param("transform matrix is not invertible"));
    }
    let inv_det = 1.0 / det;
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) * inv_det;
        }
    }
    Ok(r)
}

fn warp(img: &RgbImage, forward: &[[f64; 3]; 3]) -> Result<RgbImage> {
    let inv = invert3(forward)?;
    let (w, h) = img.dimensions();
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let z = inv[2][0] * xf + inv[2][1] * yf + inv[2][2];
            if z.abs() < 1e-12 {
                continue;
            }
            let sx = (inv[0][0] * xf + inv[0][1] * yf + inv[0][2]) / z;
            let sy = (inv[1][0] * xf + inv[1][1] * yf + inv[1][2]) / z;
            out.put_pixel(x, y, sample_black(img, sx, sy));
        }
    }
    Ok(out)
}

fn sample_black(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    // Snap near-integer coordinates so exact permutations stay exact.
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (x, y) = (snap(x), snap(y));
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return Rgb([0, 0, 0]);
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let fetch = |xi: f64, yi: f64| -> [f64; 3] {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            [0.0; 3]
        } else {
            let p = img.get_pixel(xi as u32, yi as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };
    let (a, b) = (fetch(x0, y0), fetch(x0 + 1.0, y0));
    let (c, d) = (fetch(x0, y0 + 1.0), fetch(x0 + 1.0, y0 + 1.0));
    let mut px = [0u8; 3];
    for i in 0..3 {
        let top = a[i] * (1.0 - fx) + b[i] * fx;
        let bottom = c[i] * (1.0 - fx) + d[i] * fx;
        px[i] = to_u8(top * (1.0 - fy) + bottom * fy);
    }
    Rgb(px)
}

/// Random photometric/geometric jitter drawn per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Maximum absolute rotation in degrees.
    pub rotation: f64,
    /// Maximum absolute brightness shift.
    pub brightness: f64,
    /// Contrast factor drawn from [1 - contrast, 1 + contrast].
    pub contrast: f64,
    /// Probability of a horizontal flip, realized as an affine map.
    pub flip: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotation: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            flip: 0.0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.rotation.is_finite() && self.rotation >= 0.0) {
            problems.push("augment.rotation must be >= 0".to_string());
        }
        if !(self.brightness.is_finite() && self.brightness >= 0.0) {
            problems.push("augment.brightness must be >= 0".to_string());
        }
        if !(self.contrast.is_finite() && (0.0..1.0).contains(&self.contrast)) {
            problems.push("augment.contrast must lie in [0, 1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.flip) {
            problems.push("augment.flip must lie in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.brightness == 0.0 && self.contrast == 0.0 && self.flip == 0.0
    }

    /// Ops for one sample, in application order.
    pub fn sample_ops(&self, width: u32, rng: &mut Prng) -> Vec<AugmentOp> {
        let mut ops = Vec::new();
        if self.flip > 0.0 && rng.next_f64() < self.flip {
            let w = width as f64 - 1.0;
            ops.push(AugmentOp::Affine {
                matrix: [[-1.0, 0.0, w], [0.0, 1.0, 0.0]],
            });
        }
        if self.rotation > 0.0 {
            ops.push(AugmentOp::Rotation {
                degrees: rng.uniform(-self.rotation, self.rotation),
            });
        }
        if self.brightness > 0.0 {
            ops.push(AugmentOp::Brightness {
                delta: rng.uniform(-self.brightness, self.brightness),
            });
        }
        if self.contrast > 0.0 {
            ops.push(AugmentOp::Contrast {
                factor: rng.uniform(1.0 - self.contrast, 1.0 + self.contrast),
            });
        }
        ops
    }

    pub fn apply(&self, img: &RgbImage, rng: &mut Prng) -> Result<RgbImage> {
        let mut out = img.clone();
        for op in self.sample_ops(img.width(), rng) {
            out = augment(&out, &op)?;
        }
        Ok(out)
    }
}
