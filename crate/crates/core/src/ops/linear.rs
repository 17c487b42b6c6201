use alloc::vec;

use super::gemm::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `x[N,D] · weight[K,D]ᵀ + bias[K]`.
pub fn linear<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let [n, d] = x.dims2("linear input")?;
    let [k, wd] = weight.dims2("linear weight")?;
    if wd != d {
        return Err(Error::DimensionMismatch {
            op: "linear",
            axis: "features",
            expected: d,
            found: wd,
        });
    }
    let mut out = vec![S::zero(); n * k];
    matmul_nt_acc(n, k, d, x.data(), weight.data(), &mut out);
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::DimensionMismatch {
                op: "linear",
                axis: "bias",
                expected: k,
                found: b.len(),
            });
        }
        for row in out.chunks_exact_mut(k) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::from_vec(&[n, k], out)
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub(crate) fn linear_backward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let [n, d] = x.dims2("linear input")?;
    let [k, _] = weight.dims2("linear weight")?;
    let mut gx = vec![S::zero(); n * d];
    matmul_acc(n, k, d, grad_out.data(), weight.data(), &mut gx);
    let mut gw = vec![S::zero(); k * d];
    matmul_tn_acc(k, d, n, grad_out.data(), x.data(), &mut gw);
    let mut gb = vec![S::zero(); k];
    for row in grad_out.data().chunks_exact(k) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::from_vec(&[n, d], gx)?,
        Tensor::from_vec(&[k, d], gw)?,
        Tensor::from_vec(&[k], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_returns_input() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., -4., 5., -6.]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(&[3]).unwrap();
        assert_eq!(linear(&x, &eye, Some(&b)).unwrap(), x);
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let x = Tensor::<f32>::full(&[4, 3], 2.0).unwrap();
        let w = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }
}
