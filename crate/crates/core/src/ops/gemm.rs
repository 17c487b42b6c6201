//! Small dense matrix products on row-major slices.
//!
//! Loop orders keep the innermost loop contiguous so it vectorizes; every
//! output element is accumulated in a fixed order. The forward-pass products
//! accumulate in [`Real::Acc`] precision and round to `S` once at the end.

use alloc::vec::Vec;

use num_traits::Zero;

use crate::scalar::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<S: Real>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let mut row: Vec<S::Acc> = Vec::with_capacity(n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        row.clear();
        row.extend(c_row.iter().map(|&v| v.widen()));
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aik) in a_row.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            axpy(aik.widen(), &b[p * n..(p + 1) * n], &mut row);
        }
        for (ci, &r) in c_row.iter_mut().zip(&row) {
            *ci = S::narrow(r);
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_nt_acc<S: Real>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let ci = &mut c[i * n + j];
            *ci = S::narrow(ci.widen() + dot(a_row, &b[j * k..(j + 1) * k]));
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
///
/// Used only for gradients, and accumulated directly in `S`: the outer
/// product order makes a wide buffer cost a full extra pass over `c`.
pub(crate) fn matmul_tn_acc<S: Real>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == S::zero() {
                continue;
            }
            for (ci, &bj) in c[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *ci += api * bj;
            }
        }
    }
}

/// `y += alpha · x`, accumulating in the wide type.
#[inline]
pub(crate) fn axpy<S: Real>(alpha: S::Acc, x: &[S], y: &mut [S::Acc]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi.widen();
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub(crate) fn dot<S: Real>(a: &[S], b: &[S]) -> S::Acc {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let zero = S::Acc::zero();
    let mut acc = [zero; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l].widen() * y[l].widen();
        }
    }
    let mut tail = zero;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x.widen() * y.widen();
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
