use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Variance floor used by [`znorm`].
pub const ZNORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
///
/// `tracked` counts training-mode updates; zero means uninitialized.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<S> {
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: S,
    pub epsilon: S,
    pub tracked: u64,
}

impl<S: Real> BatchNormStats<S> {
    /// Mean 0, variance 1, momentum 0.1, epsilon 1e-5, uninitialized.
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            momentum: S::of(0.1),
            epsilon: S::of(1e-5),
            tracked: 0,
        }
    }

    /// Statistics fixed to known values, counted as initialized.
    pub fn with_running(mean: Vec<S>, var: Vec<S>) -> Self {
        let mut s = Self::new(mean.len());
        s.running_mean = mean;
        s.running_var = var;
        s.tracked = 1;
        s
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked > 0
    }
}

/// Values saved by a batch-norm forward pass for its backward rule.
#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
    pub mode: NormMode,
}

fn channel_check<S: Real>(c: usize, len: usize, axis: &'static str) -> Result<()> {
    if c == len {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op: "batchnorm2d",
            axis,
            expected: c,
            found: len,
        })
    }
}

pub(crate) fn batch_norm_forward<S: Real>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    stats: &mut BatchNormStats<S>,
    mode: NormMode,
) -> Result<(Tensor<S>, BatchNormCache<S>)> {
    let [n, c, h, w] = x.dims4("batchnorm2d")?;
    channel_check::<S>(c, gamma.len(), "gamma")?;
    channel_check::<S>(c, beta.len(), "beta")?;
    channel_check::<S>(c, stats.channels(), "running statistics")?;
    let hw = h * w;
    let count = n * hw;
    let data = x.data();

    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            let inv = S::one() / S::of_usize(count);
            for ch in 0..c {
                let mut acc = S::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    acc += data[base..base + hw].iter().copied().sum::<S>();
                }
                let m = acc * inv;
                let mut sq = S::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    sq += data[base..base + hw].iter().map(|&v| (v - m) * (v - m)).sum::<S>();
                }
                mean[ch] = m;
                var[ch] = sq * inv;
            }
            let mom = stats.momentum;
            let unbias = if count > 1 {
                S::of_usize(count) / S::of_usize(count - 1)
            } else {
                S::one()
            };
            for ch in 0..c {
                stats.running_mean[ch] = (S::one() - mom) * stats.running_mean[ch] + mom * mean[ch];
                stats.running_var[ch] =
                    (S::one() - mom) * stats.running_var[ch] + mom * var[ch] * unbias;
            }
            stats.tracked += 1;
            (mean, var)
        }
        NormMode::Eval => {
            if !stats.is_initialized() {
                return Err(Error::UninitializedRunningStats);
            }
            (stats.running_mean.clone(), stats.running_var.clone())
        }
    };

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + stats.epsilon).sqrt()).collect();
    let mut xhat = vec![S::zero(); data.len()];
    let mut out = vec![S::zero(); data.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + hw {
                let xh = (data[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let shape = x.shape();
    Ok((
        Tensor::from_vec(shape, out)?,
        BatchNormCache {
            xhat: Tensor::from_vec(shape, xhat)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub(crate) fn batch_norm_backward<S: Real>(
    cache: &BatchNormCache<S>,
    gamma: &[S],
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let [n, c, h, w] = grad_out.dims4("batchnorm2d backward")?;
    let hw = h * w;
    let g = grad_out.data();
    let xhat = cache.xhat.data();
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dgamma[ch] += g[i] * xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![S::zero(); g.len()];
    match cache.mode {
        NormMode::Eval => {
            for s in 0..n {
                for ch in 0..c {
                    let k = gamma[ch] * cache.inv_std[ch];
                    let base = (s * c + ch) * hw;
                    for i in base..base + hw {
                        dx[i] = g[i] * k;
                    }
                }
            }
        }
        NormMode::Train => {
            let m = S::of_usize(n * hw);
            for ch in 0..c {
                // dxhat = g·gamma; dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ dxhat·xhat)
                let sum_dxhat = dbeta[ch] * gamma[ch];
                let sum_dxhat_xhat = dgamma[ch] * gamma[ch];
                let k = cache.inv_std[ch] / m;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for i in base..base + hw {
                        let dxhat = g[i] * gamma[ch];
                        dx[i] = k * (m * dxhat - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(grad_out.shape(), dx)?, dgamma, dbeta))
}

/// Self-contained batch-norm layer state: affine parameters, running
/// statistics and the current mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub stats: BatchNormStats<S>,
    pub mode: NormMode,
}

impl<S: Real> BatchNormState<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            stats: BatchNormStats::new(channels),
            mode: NormMode::Train,
        }
    }
}

/// Batch normalization over `(N, H, W)` per channel.
pub fn batchnorm2d<S: Real>(x: &Tensor<S>, state: &mut BatchNormState<S>) -> Result<Tensor<S>> {
    let mode = state.mode;
    batch_norm_forward(x, &state.gamma, &state.beta, &mut state.stats, mode).map(|(y, _)| y)
}

/// Per-column standardization of `features[N,D]` over the N rows.
///
/// Population variance, floored at [`ZNORM_EPS`] so constant columns map to
/// zero instead of dividing by zero.
pub fn znorm<S: Real>(features: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, d] = features.dims2("znorm")?;
    let (mean, std) = column_moments(features.data(), n, d);
    let mut out = features.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        for j in 0..d {
            row[j] = (row[j] - mean[j]) / std[j];
        }
    }
    Ok(out)
}

/// Column means and floored standard deviations.
pub(crate) fn column_moments<S: Real>(data: &[S], n: usize, d: usize) -> (Vec<S>, Vec<S>) {
    let inv = S::one() / S::of_usize(n);
    let mut mean = vec![S::zero(); d];
    for row in data.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![S::zero(); d];
    for row in data.chunks_exact(d) {
        for j in 0..d {
            let e = row[j] - mean[j];
            var[j] += e * e;
        }
    }
    let floor = S::of(ZNORM_EPS);
    let std = var.iter().map(|&v| (v * inv).max(floor).sqrt()).collect();
    (mean, std)
}
