use crate::scalar::Real;
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn sigmoid<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_scalar)
}

pub fn tanh<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.tanh())
}

#[inline]
pub(crate) fn sigmoid_scalar<S: Real>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}
