use super::gemm::gemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

fn check(input: Shape, weights: Shape, bias: usize) -> Result<(usize, usize, usize)> {
    let features = input.sample_len();
    if weights.h != 1 || weights.w != 1 {
        return Err(Error::dim("dense", "weight rank", 1, weights.h * weights.w));
    }
    if weights.n != features {
        return Err(Error::dim("dense", "features", weights.n, features));
    }
    if bias != weights.c {
        return Err(Error::dim("dense", "bias", weights.c, bias));
    }
    Ok((input.n, features, weights.c))
}

/// `input (N, F) · weights (F, U) + bias`. Weights are stored as shape `(F, U, 1, 1)`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (n, f, u) = check(input.shape(), weights.shape(), bias.len())?;
    let mut out = Tensor::zeros(Shape::flat(n, u));
    for row in out.data_mut().chunks_mut(u.max(1)) {
        row.copy_from_slice(bias);
    }
    gemm(n, f, u, input.data(), false, weights.data(), false, out.data_mut(), true);
    Ok(out)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (n, f, u) = check(input.shape(), weights.shape(), weights.shape().c)?;
    if grad_out.shape() != Shape::flat(n, u) {
        return Err(Error::dim("dense backward", "units", u, grad_out.shape().sample_len()));
    }
    let mut dw = vec![0.0f32; f * u];
    gemm(f, n, u, input.data(), true, grad_out.data(), false, &mut dw, false);
    let mut bias = vec![0.0f32; u];
    for row in grad_out.data().chunks(u.max(1)) {
        for (b, g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dx = vec![0.0f32; n * f];
    gemm(n, u, f, grad_out.data(), false, weights.data(), true, &mut dx, false);
    Ok(DenseGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        weights: Tensor::from_vec(weights.shape(), dw)?,
        bias,
    })
}
