//! Independent reference implementations used as test oracles. They are
//! plain loops, mostly in f64, and share no code with the crate.
#![allow(dead_code)]

use leafnet::{Prng, Shape, Tensor};

/// Dense f64 rank-4 array in N, C, H, W order.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Arr {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Self {
            n: s.n,
            c: s.c,
            h: s.h,
            w: s.w,
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn with_values(&self, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.v.len());
        Self { v, ..*self }
    }

    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.v[self.idx(n, c, h, w)]
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.n, self.c, self.h, self.w)
    }
}

pub fn random_tensor(shape: Shape, rng: &mut Prng, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.uniform(lo, hi) as f32).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn gaussian_tensor(shape: Shape, rng: &mut Prng, std: f64) -> Tensor {
    let data = (0..shape.len()).map(|_| (rng.gaussian() * std) as f32).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct convolution with six nested loops. `same` pads k-1 in total,
/// with the smaller half before.
pub fn conv2d(x: &Arr, w: &Arr, b: &[f64], stride: usize, same: bool) -> Arr {
    let (kh, kw) = (w.h, w.w);
    let (pt, pb, pl, pr) = if same {
        ((kh - 1) / 2, kh / 2, (kw - 1) / 2, kw / 2)
    } else {
        (0, 0, 0, 0)
    };
    let oh = (x.h + pt + pb - kh) / stride + 1;
    let ow = (x.w + pl + pr - kw) / stride + 1;
    let mut out = Arr::zeros(x.n, w.n, oh, ow);
    for n in 0..x.n {
        for oc in 0..w.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..x.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pt as isize;
                                let ix = (ox * stride + kx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ic, iy as usize, ix as usize) * w.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    let i = out.idx(n, oc, oy, ox);
                    out.v[i] = acc;
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &Arr, window: usize, stride: usize) -> Arr {
    let oh = (x.h - window) / stride + 1;
    let ow = (x.w - window) / stride + 1;
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..window {
                        for dx in 0..window {
                            m = m.max(x.at(n, c, oy * stride + dy, ox * stride + dx));
                        }
                    }
                    let i = out.idx(n, c, oy, ox);
                    out.v[i] = m;
                }
            }
        }
    }
    out
}

pub fn relu(x: &Arr) -> Arr {
    x.with_values(x.v.iter().map(|&v| v.max(0.0)).collect())
}

/// Train-mode batch normalization with biased batch variance.
pub fn batchnorm_train(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> Arr {
    let mut out = x.clone();
    let count = (x.n * x.h * x.w) as f64;
    for c in 0..x.c {
        let mut sum = 0.0;
        for n in 0..x.n {
            for y in 0..x.h {
                for z in 0..x.w {
                    sum += x.at(n, c, y, z);
                }
            }
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for n in 0..x.n {
            for y in 0..x.h {
                for z in 0..x.w {
                    sq += (x.at(n, c, y, z) - mean).powi(2);
                }
            }
        }
        let inv = 1.0 / (sq / count + eps).sqrt();
        for n in 0..x.n {
            for y in 0..x.h {
                for z in 0..x.w {
                    let i = x.idx(n, c, y, z);
                    out.v[i] = gamma[c] * (x.v[i] - mean) * inv + beta[c];
                }
            }
        }
    }
    out
}

/// `x` is read as (N, F) regardless of its spatial layout; `w` is (F, U).
pub fn dense(x: &Arr, w: &[f64], b: &[f64]) -> Arr {
    let f = x.c * x.h * x.w;
    let u = b.len();
    assert_eq!(w.len(), f * u);
    let mut out = Arr::zeros(x.n, u, 1, 1);
    for n in 0..x.n {
        for j in 0..u {
            let mut acc = b[j];
            for i in 0..f {
                acc += x.v[n * f + i] * w[i * u + j];
            }
            out.v[n * u + j] = acc;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` under the row softmax of `logits`.
pub fn softmax_ce(logits: &Arr, labels: &[usize]) -> f64 {
    let k = logits.c * logits.h * logits.w;
    let mut total = 0.0;
    for (n, &l) in labels.iter().enumerate() {
        let row = &logits.v[n * k..(n + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

/// Weighted sum `Σ r_i · y_i`, the scalar probe used for layer gradient checks.
pub fn probe(y: &Arr, r: &[f64]) -> f64 {
    y.v.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Denominator floor so that entries that are zero on both sides compare as equal.
pub const REL_FLOOR: f64 = 1e-4;

/// Brute-force confusion counts `[actual][predicted]`.
pub fn confusion(pred: &[usize], actual: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for a in 0..k {
        for p in 0..k {
            m[a][p] = pred.iter().zip(actual).filter(|(&x, &y)| x == p && y == a).count() as u64;
        }
    }
    m
}

/// Per-class (precision, recall, f1, support) counted directly from the pairs.
pub fn per_class(pred: &[usize], actual: &[usize], k: usize) -> Vec<(f64, f64, f64, u64)> {
    (0..k)
        .map(|c| {
            let tp = pred.iter().zip(actual).filter(|(&p, &a)| p == c && a == c).count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let support = actual.iter().filter(|&&a| a == c).count();
            let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * (recall * precision) / (recall + precision)
            };
            (precision, recall, f1, support as u64)
        })
        .collect()
}

/// Mann-Whitney statistic: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Straightforward f32 convolution loop, stride 1 with `same` padding. Used as
/// the timing baseline for the im2col path.
pub fn conv2d_naive_f32(x: &Tensor, w: &Tensor, b: &[f32]) -> Vec<f32> {
    let xs = x.shape();
    let ws = w.shape();
    let (pt, pl) = ((ws.h - 1) / 2, (ws.w - 1) / 2);
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0f32; xs.n * ws.n * xs.h * xs.w];
    for n in 0..xs.n {
        for oc in 0..ws.n {
            for oy in 0..xs.h {
                for ox in 0..xs.w {
                    let mut acc = b[oc];
                    for ic in 0..xs.c {
                        for ky in 0..ws.h {
                            let iy = oy as isize + ky as isize - pt as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..ws.w {
                                let ix = ox as isize + kx as isize - pl as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += xd[((n * xs.c + ic) * xs.h + iy as usize) * xs.w + ix as usize]
                                    * wd[((oc * ws.c + ic) * ws.h + ky) * ws.w + kx];
                            }
                        }
                    }
                    out[((n * ws.n + oc) * xs.h + oy) * xs.w + ox] = acc;
                }
            }
        }
    }
    out
}
