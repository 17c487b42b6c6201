use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Geometry of a 2-D cross-correlation with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// `floor((input + 2·padding − kernel) / stride) + 1`, which must be ≥ 1.
    pub fn output_extent(&self, input: usize, kernel: usize, axis: &'static str) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::EmptyOutput { op: "conv2d", axis: "stride" });
        }
        let padded = input + 2 * self.padding;
        if kernel == 0 || padded < kernel {
            return Err(Error::EmptyOutput { op: "conv2d", axis });
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.output_extent(h, self.kernel_h, "height")?,
            self.output_extent(w, self.kernel_w, "width")?,
        ))
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self, spec: &ConvSpec) -> usize {
        self.c * spec.kernel_h * spec.kernel_w
    }
}

fn geometry<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    let [n, c, h, w] = input.dims4("conv2d input")?;
    let [k, wc, kh, kw] = weight.dims4("conv2d weight")?;
    if wc != c {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: "channels",
            expected: c,
            found: wc,
        });
    }
    if kh != spec.kernel_h {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: "kernel_h",
            expected: spec.kernel_h,
            found: kh,
        });
    }
    if kw != spec.kernel_w {
        return Err(Error::DimensionMismatch {
            op: "conv2d",
            axis: "kernel_w",
            expected: spec.kernel_w,
            found: kw,
        });
    }
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::DimensionMismatch {
                op: "conv2d",
                axis: "bias",
                expected: k,
                found: b.len(),
            });
        }
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    Ok(Geometry { n, c, h, w, k, oh, ow })
}

/// Unfolds one `[C, H, W]` sample into `[C·kh·kw, oh·ow]` patch columns.
fn im2col<S: Real>(x: &[S], g: &Geometry, spec: &ConvSpec, cols: &mut [S]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki) as isize - pad;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kj) as isize - pad;
                        *o = if ix < 0 || ix >= g.w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<S: Real>(cols: &[S], g: &Geometry, spec: &ConvSpec, x: &mut [S]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) of `input[N,C,H,W]` with
/// `weight[K,C,kh,kw]`, plus an optional per-output-channel bias.
pub fn conv2d<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    conv2d_forward(input, weight, bias, spec, false).map(|(out, _)| out)
}

/// Forward pass; when `keep_cols` is set the unfolded input is returned for
/// reuse by [`conv2d_backward`].
pub(crate) fn conv2d_forward<S: Real>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
    keep_cols: bool,
) -> Result<(Tensor<S>, Vec<S>)> {
    let g = geometry(input, weight, bias, spec)?;
    let rows = g.col_rows(spec);
    let p = g.oh * g.ow;
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.k * p;
    let mut out = vec![S::zero(); g.n * out_sz];
    let mut kept = if keep_cols { Vec::with_capacity(g.n * rows * p) } else { Vec::new() };
    let mut cols = vec![S::zero(); rows * p];
    for s in 0..g.n {
        im2col(&input.data()[s * in_sz..(s + 1) * in_sz], &g, spec, &mut cols);
        let o = &mut out[s * out_sz..(s + 1) * out_sz];
        matmul_acc(g.k, rows, p, weight.data(), &cols, o);
        if let Some(b) = bias {
            for (ch, &bv) in b.data().iter().enumerate() {
                o[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
        if keep_cols {
            kept.extend_from_slice(&cols);
        }
    }
    Ok((Tensor::from_vec(&[g.n, g.k, g.oh, g.ow], out)?, kept))
}

/// Gradients of a convolution with respect to input, weight and bias, given
/// the unfolded input saved by the forward pass.
pub(crate) fn conv2d_backward<S: Real>(
    input_shape: &[usize],
    weight: &Tensor<S>,
    cols: &[S],
    spec: &ConvSpec,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let input = Tensor::<S>::zeros(input_shape)?;
    let g = geometry(&input, weight, None, spec)?;
    let rows = g.col_rows(spec);
    let p = g.oh * g.ow;
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.k * p;
    let mut gin = input.into_data();
    let mut gw = vec![S::zero(); weight.len()];
    let mut gb = vec![S::zero(); g.k];
    let mut gcols = vec![S::zero(); rows * p];
    for s in 0..g.n {
        let go = &grad_out.data()[s * out_sz..(s + 1) * out_sz];
        let sc = &cols[s * rows * p..(s + 1) * rows * p];
        matmul_nt_acc(g.k, rows, p, go, sc, &mut gw);
        for (ch, b) in gb.iter_mut().enumerate() {
            *b += go[ch * p..(ch + 1) * p].iter().copied().sum::<S>();
        }
        gcols.fill(S::zero());
        matmul_tn_acc(rows, p, g.k, weight.data(), go, &mut gcols);
        col2im(&gcols, &g, spec, &mut gin[s * in_sz..(s + 1) * in_sz]);
    }
    Ok((
        Tensor::from_vec(input_shape, gin)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[g.k], gb)?,
    ))
}
