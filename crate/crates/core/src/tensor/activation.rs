use super::{check_same_shape, Mode, Shape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Prng;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same length")
}

/// Gradient of ReLU, gated on the forward input being positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    check_same_shape("relu backward", input.shape(), grad_out.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// `(N, C, H, W)` to `(N, C·H·W, 1, 1)`; values are untouched.
pub fn flatten(input: Tensor) -> Tensor {
    let s = input.shape();
    input.reshape(Shape::flat(s.n, s.sample_len())).expect("same length")
}

pub fn unflatten(input: Tensor, shape: Shape) -> Result<Tensor> {
    input.reshape(shape)
}

/// Per-unit multipliers applied by a training-mode dropout pass:
/// 0 for dropped units, `1 / (1 - rate)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub scale: Vec<f32>,
}

/// Inverted dropout. Identity in infer mode or when `rate` is 0.
pub fn dropout_forward(input: &Tensor, rate: f32, rng: &mut Prng, mode: Mode) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f32> = (0..input.len())
        .map(|_| if rng.next_f32() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(DropoutMask { scale })))
}

pub fn dropout_backward(mask: Option<&DropoutMask>, grad_out: &Tensor) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.scale.len() != grad_out.len() {
                return Err(Error::dim("dropout backward", "length", m.scale.len(), grad_out.len()));
            }
            let data = grad_out.data().iter().zip(&m.scale).map(|(g, s)| g * s).collect();
            Tensor::from_vec(grad_out.shape(), data)
        }
    }
}
