use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy {
    /// Mean negative log-probability of the true classes.
    pub loss: f64,
    pub probs: Tensor,
    /// `(probs - onehot) / N`.
    pub grad: Tensor,
}

fn softmax_row(logits: &[f32], out: &mut [f32]) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + max
}

/// Row-wise softmax of `(N, K)` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let k = s.sample_len();
    let mut probs = Tensor::zeros(Shape::flat(s.n, k));
    if k > 0 {
        for (row, out) in logits.data().chunks(k).zip(probs.data_mut().chunks_mut(k)) {
            softmax_row(row, out);
        }
    }
    probs
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxCrossEntropy> {
    let s = logits.shape();
    let k = s.sample_len();
    if k == 0 {
        return Err(Error::param("softmax cross-entropy needs at least one class"));
    }
    if labels.len() != s.n {
        return Err(Error::dim("softmax cross-entropy", "batch", s.n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Tensor::zeros(Shape::flat(s.n, k));
    let mut grad = Tensor::zeros(Shape::flat(s.n, k));
    let mut total = 0.0f64;
    let inv_n = 1.0 / s.n.max(1) as f32;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let p = &mut probs.data_mut()[i * k..(i + 1) * k];
        let log_sum = softmax_row(row, p);
        total += (log_sum - row[label]) as f64;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            *gj = (probs.data()[i * k + j] - onehot) * inv_n;
        }
    }
    let loss = if s.n == 0 { 0.0 } else { total / s.n as f64 };
    Ok(SoftmaxCrossEntropy { loss, probs, grad })
}
