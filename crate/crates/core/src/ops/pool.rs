use alloc::vec;

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Mean over the spatial axes: `[N,C,H,W] → [N,C]`.
pub fn global_avg_pool<S: Real>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    let hw = h * w;
    let inv = S::one() / S::of_usize(hw);
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<S>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub(crate) fn global_avg_pool_backward<S: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let hw = input_shape[2] * input_shape[3];
    let inv = S::one() / S::of_usize(hw);
    let mut data = vec![S::zero(); grad_out.len() * hw];
    for (plane, &g) in data.chunks_exact_mut(hw).zip(grad_out.data()) {
        plane.fill(g * inv);
    }
    Tensor::from_vec(input_shape, data)
}

/// Mean over the leading axis: `[N,D] → [1,D]`.
///
/// Each column is summed in ascending value order, so the result is
/// bitwise independent of the row order.
pub fn mean_rows<S: Real>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, d] = x.dims2("mean_rows")?;
    let inv = S::one() / S::of_usize(n);
    let mut column = alloc::vec::Vec::with_capacity(n);
    let mut out = vec![S::zero(); d];
    for (j, o) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(x.data().iter().skip(j).step_by(d).copied());
        column.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        *o = column.iter().copied().sum::<S>() * inv;
    }
    Tensor::from_vec(&[1, d], out)
}

pub(crate) fn mean_rows_backward<S: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let n = input_shape[0];
    let inv = S::one() / S::of_usize(n);
    let row: alloc::vec::Vec<S> = grad_out.data().iter().map(|&g| g * inv).collect();
    let mut data = alloc::vec::Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(&row);
    }
    Tensor::from_vec(input_shape, data)
}
