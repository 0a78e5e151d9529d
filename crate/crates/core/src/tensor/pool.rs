use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Argmax position (index within the sample) of every pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

pub fn pool_output_size(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

fn out_dims(shape: Shape, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 {
        return Err(Error::param("maxpool window and stride must be >= 1"));
    }
    let oh = pool_output_size(shape.h, window, stride)
        .ok_or_else(|| Error::dim("maxpool2d", "height", window, shape.h))?;
    let ow = pool_output_size(shape.w, window, stride)
        .ok_or_else(|| Error::dim("maxpool2d", "width", window, shape.w))?;
    Ok((oh, ow))
}

/// Max pooling without padding. Ties go to the lowest linear index in the window.
pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let s = input.shape();
    let (oh, ow) = out_dims(s, window, stride)?;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.len()];
    let out_len = out_shape.sample_len();
    if out_len > 0 {
        out.data_mut()
            .par_chunks_mut(out_len)
            .zip(argmax.par_chunks_mut(out_len))
            .enumerate()
            .for_each(|(i, (dst, idx))| {
                let src = input.sample(i);
                for c in 0..s.c {
                    let plane = c * s.h * s.w;
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut best = plane + y * stride * s.w + x * stride;
                            for dy in 0..window {
                                let row = plane + (y * stride + dy) * s.w + x * stride;
                                for j in row..row + window {
                                    if src[j] > src[best] {
                                        best = j;
                                    }
                                }
                            }
                            let o = c * oh * ow + y * ow + x;
                            dst[o] = src[best];
                            idx[o] = best as u32;
                        }
                    }
                }
            });
    }
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

/// Route each output gradient to the input position that won the forward max.
pub fn maxpool2d_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::dim("maxpool2d backward", "length", indices.argmax.len(), grad_out.len()));
    }
    let mut dx = Tensor::zeros(indices.input_shape);
    let in_len = indices.input_shape.sample_len();
    let out_len = grad_out.shape().sample_len();
    if in_len > 0 && out_len > 0 {
        dx.data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .for_each(|(i, dst)| {
                let go = grad_out.sample(i);
                let idx = &indices.argmax[i * out_len..(i + 1) * out_len];
                for (g, &j) in go.iter().zip(idx) {
                    dst[j as usize] += g;
                }
            });
    }
    Ok(dx)
}
