use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax<S: Real>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = S::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// Returns the loss and the probabilities.
pub fn softmax_cross_entropy<S: Real>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            op: "softmax_cross_entropy",
            axis: "labels",
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let probs = softmax(logits)?;
    let mut loss = S::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        // log-sum-exp evaluated directly keeps saturated rows exact
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
        loss += lse - row[label];
    }
    Ok((loss / S::of_usize(n), probs))
}

/// `(probs − onehot(labels)) / N`, the gradient of the mean loss.
pub(crate) fn softmax_cross_entropy_backward<S: Real>(
    probs: &Tensor<S>,
    labels: &[usize],
    scale: S,
) -> Tensor<S> {
    let k = probs.shape()[1];
    let n = labels.len();
    let inv = scale / S::of_usize(n);
    let mut g: Vec<S> = probs.data().to_vec();
    for (row, &label) in g.chunks_exact_mut(k).zip(labels) {
        row[label] -= S::one();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::from_vec(probs.shape(), g).expect("shape preserved")
}
