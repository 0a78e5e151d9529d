//! Rank-4 tensors and the layer primitives the model zoo is built from.
//!
//! Every tensor is laid out as batch × channels × height × width in row-major
//! order. Fully connected activations use shape `(N, F, 1, 1)`.
//!
//! Ops may fan out across the batch with rayon. Any reduction that crosses
//! samples is performed over fixed-size sample chunks whose partial results
//! are summed in chunk order, so results do not depend on the thread count.

mod activation;
mod batchnorm;
mod conv;
mod dense;
pub(crate) mod gemm;
mod loss;
mod optim;
mod pool;

pub use activation::{
    dropout_backward, dropout_forward, flatten, relu_backward, relu_forward, unflatten,
    DropoutMask,
};
pub use batchnorm::{
    batchnorm2d, batchnorm2d_backward, batchnorm2d_forward, update_running_stats, BatchNormCache,
    BatchNormGrads,
};
pub use conv::{
    col2im, conv2d_backward, conv2d_forward, im2col, ConvGeometry, ConvGrads,
};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxCrossEntropy};
pub use optim::{adam_step, add_l2_gradient, l2_penalty, AdamState};
pub use pool::{maxpool2d_backward, maxpool2d_forward, pool_output_size, PoolIndices};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per partial sum when a reduction crosses the batch axis.
pub(crate) const REDUCE_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Shape of a batch of flat feature vectors.
    pub const fn flat(n: usize, features: usize) -> Self {
        Self::new(n, features, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Whether a layer runs with training behaviour (batch statistics, active dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Padding before and after along one axis for a kernel of extent `k`.
    /// Even kernels put the extra row/column at the end.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => ((k - 1) / 2, k / 2),
            Padding::Valid => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
            grad: None,
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::dim("tensor", "length", shape.len(), data.len()));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim("tensor grad", "length", self.data.len(), grad.len()));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f32>> {
        self.grad.take()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Same values under a new shape of equal length.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::dim("reshape", "length", self.data.len(), shape.len()));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// Error on the first NaN or infinity.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        ensure_finite(&self.data, context)
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("add", self.shape, other.shape)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor {
            shape: self.shape,
            data,
            grad: None,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        check_same_shape("add", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

pub(crate) fn ensure_finite(values: &[f32], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            context: context.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_same_shape(op: &str, expected: Shape, actual: Shape) -> Result<()> {
    let names = ["batch", "channels", "height", "width"];
    for ((e, a), name) in expected.dims().iter().zip(actual.dims()).zip(names) {
        if *e != a {
            return Err(Error::dim(op, name, *e, a));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 8]).is_ok());
        let err = Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn same_padding_splits_floor_ceil() {
        assert_eq!(Padding::Same.amounts(3), (1, 1));
        assert_eq!(Padding::Same.amounts(6), (2, 3));
        assert_eq!(Padding::Same.amounts(1), (0, 0));
        assert_eq!(Padding::Valid.amounts(6), (0, 0));
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 2, 4, 3));
        match a.add(&b).unwrap_err() {
            Error::Dimension { axis, .. } => assert_eq!(axis, "height"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn grad_length_checked() {
        let mut t = Tensor::zeros(Shape::flat(2, 3));
        assert!(t.set_grad(vec![0.0; 5]).is_err());
        t.set_grad(vec![1.0; 6]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 6);
    }
}
