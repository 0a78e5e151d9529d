//! Per-channel batch normalization over (N, H, W).
//!
//! Variances use the biased (population) estimator for both batch and running
//! statistics. Running statistics follow
//! `running = momentum * running + (1 - momentum) * batch`.

use super::{check_same_shape, Mode, Shape, Tensor};
use crate::error::{Error, Result};

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Statistics used for normalization; batch statistics when `batch_stats`.
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub normalized: Tensor,
    pub batch_stats: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

fn check_vectors(c: usize, vs: &[(&str, usize)]) -> Result<()> {
    for &(name, len) in vs {
        if len != c {
            return Err(Error::dim("batchnorm2d", name, c, len));
        }
    }
    Ok(())
}

fn channel_stats(input: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = input.shape();
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut mean = vec![0.0f32; s.c];
    let mut var = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            sum += input.data()[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            sq += input.data()[off..off + plane]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[c] = m as f32;
        var[c] = (sq / count) as f32;
    }
    (mean, var)
}

/// Normalize with batch statistics (`Mode::Train`) or the supplied running
/// statistics (`Mode::Infer`). Running statistics are not modified here.
pub fn batchnorm2d_forward(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    mode: Mode,
    eps: f32,
) -> Result<(Tensor, BatchNormCache)> {
    let s = input.shape();
    check_vectors(
        s.c,
        &[
            ("gamma", gamma.len()),
            ("beta", beta.len()),
            ("running mean", running_mean.len()),
            ("running variance", running_var.len()),
        ],
    )?;
    if !(eps > 0.0) {
        return Err(Error::param("batchnorm eps must be > 0"));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if s.n * s.plane() == 0 {
                return Err(Error::param("batchnorm2d: empty batch in train mode"));
            }
            channel_stats(input)
        }
        Mode::Infer => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let plane = s.plane();
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    {
        let xh = normalized.data_mut();
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for j in off..off + plane {
                    xh[j] = (input.data()[j] - mean[c]) * inv_std[c];
                }
            }
        }
    }
    {
        let y = out.data_mut();
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for j in off..off + plane {
                    y[j] = gamma[c] * normalized.data()[j] + beta[c];
                }
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            mean,
            var,
            inv_std,
            normalized,
            batch_stats: mode == Mode::Train,
        },
    ))
}

pub fn update_running_stats(
    running_mean: &mut [f32],
    running_var: &mut [f32],
    cache: &BatchNormCache,
    momentum: f32,
) {
    for (r, b) in running_mean.iter_mut().zip(&cache.mean) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
    for (r, b) in running_var.iter_mut().zip(&cache.var) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
}

/// Forward pass that also updates running statistics in train mode.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    mode: Mode,
    eps: f32,
    momentum: f32,
) -> Result<(Tensor, BatchNormCache)> {
    let (out, cache) = batchnorm2d_forward(input, gamma, beta, running_mean, running_var, mode, eps)?;
    if mode == Mode::Train {
        update_running_stats(running_mean, running_var, &cache, momentum);
    }
    Ok((out, cache))
}

pub fn batchnorm2d_backward(cache: &BatchNormCache, gamma: &[f32], grad_out: &Tensor) -> Result<BatchNormGrads> {
    let s: Shape = cache.normalized.shape();
    check_same_shape("batchnorm2d backward", s, grad_out.shape())?;
    check_vectors(s.c, &[("gamma", gamma.len())])?;
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let dy = grad_out.data();
    let xh = cache.normalized.data();

    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    let mut sum_dy = vec![0.0f64; s.c];
    let mut sum_dy_xh = vec![0.0f64; s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for j in off..off + plane {
                sum_dy[c] += dy[j] as f64;
                sum_dy_xh[c] += (dy[j] * xh[j]) as f64;
            }
        }
        dbeta[c] = sum_dy[c] as f32;
        dgamma[c] = sum_dy_xh[c] as f32;
    }

    let mut dx = Tensor::zeros(s);
    let out = dx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            let scale = gamma[c] * cache.inv_std[c];
            if cache.batch_stats {
                let mean_dy = (sum_dy[c] / count) as f32;
                let mean_dy_xh = (sum_dy_xh[c] / count) as f32;
                for j in off..off + plane {
                    out[j] = scale * (dy[j] - mean_dy - xh[j] * mean_dy_xh);
                }
            } else {
                for j in off..off + plane {
                    out[j] = scale * dy[j];
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
