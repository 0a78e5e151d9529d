//! 2-D convolution through im2col and GEMM.

use rayon::prelude::*;

use super::gemm::gemm;
use super::{Padding, Shape, Tensor, REDUCE_CHUNK};
use crate::error::{Error, Result};

/// Resolved sizes for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn output_extent(axis: &str, input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    let (begin, end) = padding.amounts(k);
    let padded = input + begin + end;
    if padded < k {
        return Err(Error::dim("conv2d", axis, k, padded));
    }
    Ok(((padded - k) / stride + 1, begin))
}

impl ConvGeometry {
    pub fn new(
        input: Shape,
        out_c: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("conv2d stride must be >= 1"));
        }
        if k_h == 0 || k_w == 0 {
            return Err(Error::param("conv2d kernel extent must be >= 1"));
        }
        let (out_h, pad_top) = output_extent("height", input.h, k_h, stride, padding)?;
        let (out_w, pad_left) = output_extent("width", input.w, k_w, stride, padding)?;
        Ok(Self {
            in_c: input.c,
            in_h: input.h,
            in_w: input.w,
            out_c,
            k_h,
            k_w,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Geometry for `input` convolved with a weight tensor `(out_c, in_c, k_h, k_w)`.
    pub fn for_weights(input: Shape, weights: Shape, stride: usize, padding: Padding) -> Result<Self> {
        if input.c != weights.c {
            return Err(Error::dim("conv2d", "channels", weights.c, input.c));
        }
        Self::new(input, weights.n, weights.h, weights.w, stride, padding)
    }

    /// Rows of the column matrix: one per (channel, kernel row, kernel column).
    pub fn col_rows(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    /// Columns of the column matrix: one per output position.
    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self, n: usize) -> Shape {
        Shape::new(n, self.out_c, self.out_h, self.out_w)
    }

    pub fn input_shape(&self, n: usize) -> Shape {
        Shape::new(n, self.in_c, self.in_h, self.in_w)
    }
}

fn im2col_sample(src: &[f32], g: &ConvGeometry, dst: &mut [f32]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &src[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let out_row = &mut dst[row * cols..(row + 1) * cols];
                for oh in 0..g.out_h {
                    let seg = &mut out_row[oh * g.out_w..(oh + 1) * g.out_w];
                    let ih = (oh * g.stride + kh) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    for (ow, v) in seg.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kw) as isize - g.pad_left as isize;
                        *v = if iw < 0 || iw >= g.in_w as isize {
                            0.0
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_sample(src: &[f32], g: &ConvGeometry, dst: &mut [f32]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dst[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for kh in 0..g.k_h {
            for kw in 0..g.k_w {
                let col_row = &src[row * cols..(row + 1) * cols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + kh) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    let base = ih as usize * g.in_w;
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kw) as isize - g.pad_left as isize;
                        if iw >= 0 && iw < g.in_w as isize {
                            plane[base + iw as usize] += col_row[oh * g.out_w + ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Unfold every sample of `input` into its column matrix. The result holds
/// `n` consecutive `col_rows × col_cols` blocks.
pub fn im2col(input: &Tensor, geometry: &ConvGeometry) -> Result<Vec<f32>> {
    check_input(input.shape(), geometry)?;
    let n = input.shape().n;
    let block = geometry.col_rows() * geometry.col_cols();
    let mut out = vec![0.0; n * block];
    out.par_chunks_mut(block.max(1))
        .enumerate()
        .for_each(|(i, dst)| im2col_sample(input.sample(i), geometry, dst));
    Ok(out)
}

/// Fold column matrices back into an image, summing overlapping contributions.
pub fn col2im(cols: &[f32], geometry: &ConvGeometry, n: usize) -> Result<Tensor> {
    let block = geometry.col_rows() * geometry.col_cols();
    if cols.len() != n * block {
        return Err(Error::dim("col2im", "length", n * block, cols.len()));
    }
    let mut out = Tensor::zeros(geometry.input_shape(n));
    let sample_len = out.shape().sample_len();
    if sample_len > 0 {
        out.data_mut()
            .par_chunks_mut(sample_len)
            .enumerate()
            .for_each(|(i, dst)| col2im_sample(&cols[i * block..(i + 1) * block], geometry, dst));
    }
    Ok(out)
}

fn check_input(input: Shape, g: &ConvGeometry) -> Result<()> {
    if input.c != g.in_c {
        return Err(Error::dim("conv2d", "channels", g.in_c, input.c));
    }
    if input.h != g.in_h {
        return Err(Error::dim("conv2d", "height", g.in_h, input.h));
    }
    if input.w != g.in_w {
        return Err(Error::dim("conv2d", "width", g.in_w, input.w));
    }
    Ok(())
}

fn check_params(weights: &Tensor, bias: &[f32], g: &ConvGeometry) -> Result<()> {
    let ws = weights.shape();
    if ws.n != g.out_c {
        return Err(Error::dim("conv2d", "filters", g.out_c, ws.n));
    }
    if ws.c != g.in_c {
        return Err(Error::dim("conv2d", "channels", g.in_c, ws.c));
    }
    if ws.h != g.k_h || ws.w != g.k_w {
        return Err(Error::dim("conv2d", "kernel", g.k_h * g.k_w, ws.h * ws.w));
    }
    if bias.len() != g.out_c {
        return Err(Error::dim("conv2d", "bias", g.out_c, bias.len()));
    }
    Ok(())
}

/// Forward convolution. Weights are `(out_c, in_c, k_h, k_w)`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::for_weights(input.shape(), weights.shape(), stride, padding)?;
    check_params(weights, bias, &g)?;
    let n = input.shape().n;
    let mut out = Tensor::zeros(g.output_shape(n));
    let out_len = g.out_c * g.col_cols();
    if out_len == 0 || n == 0 {
        return Ok(out);
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each_init(
            || vec![0.0f32; rows * cols],
            |col, (i, dst)| {
                im2col_sample(input.sample(i), &g, col);
                for (oc, row) in dst.chunks_mut(cols).enumerate() {
                    row.fill(bias[oc]);
                }
                gemm(g.out_c, rows, cols, weights.data(), false, col, false, dst, true);
            },
        );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = ConvGeometry::for_weights(input.shape(), weights.shape(), stride, padding)?;
    let n = input.shape().n;
    super::check_same_shape("conv2d backward", g.output_shape(n), grad_out.shape())?;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let out_len = g.out_c * cols;

    let mut bias = vec![0.0f32; g.out_c];
    for i in 0..n {
        let go = grad_out.sample(i);
        for (oc, b) in bias.iter_mut().enumerate() {
            *b += go[oc * cols..(oc + 1) * cols].iter().sum::<f32>();
        }
    }

    let sample_ids: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f32>> = sample_ids
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut dw = vec![0.0f32; g.out_c * rows];
            let mut col = vec![0.0f32; rows * cols];
            for &i in chunk {
                im2col_sample(input.sample(i), &g, &mut col);
                let go = &grad_out.data()[i * out_len..(i + 1) * out_len];
                gemm(g.out_c, cols, rows, go, false, &col, true, &mut dw, true);
            }
            dw
        })
        .collect();
    let mut dw = vec![0.0f32; g.out_c * rows];
    for p in &partials {
        for (a, b) in dw.iter_mut().zip(p) {
            *a += b;
        }
    }

    let input_grad = if need_input_grad {
        let mut dx = Tensor::zeros(input.shape());
        let sample_len = input.shape().sample_len();
        if sample_len > 0 {
            dx.data_mut()
                .par_chunks_mut(sample_len)
                .enumerate()
                .for_each_init(
                    || vec![0.0f32; rows * cols],
                    |dcol, (i, dst)| {
                        let go = &grad_out.data()[i * out_len..(i + 1) * out_len];
                        gemm(rows, g.out_c, cols, weights.data(), true, go, false, dcol, false);
                        col2im_sample(dcol, &g, dst);
                    },
                );
        }
        Some(dx)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::from_vec(weights.shape(), dw)?,
        bias,
    })
}
