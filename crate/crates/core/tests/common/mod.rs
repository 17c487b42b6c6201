//! Reference implementations written as plain loops over `f64`, sharing no
//! code with the library kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrn_core::autograd::ParamStore;
use rrn_core::blocks::TemporalConnection;
use rrn_core::model::{BlockPosition, NetworkConfig, Readout, RecurrentResidualNet, Stage};
use rrn_core::Tensor;

/// A plain 4-D array `[n, c, h, w]`.
#[derive(Clone, Debug)]
pub struct Arr {
    pub dims: [usize; 4],
    pub v: Vec<f64>,
}

impl Arr {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            v: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_tensor<S: rrn_core::Real>(t: &Tensor<S>) -> Self {
        let s = t.shape();
        Self {
            dims: [s[0], s[1], s[2], s[3]],
            v: t.data().iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, hh, ww] = self.dims;
        self.v[((n * cc + c) * hh + y) * ww + x]
    }

    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let [_, cc, hh, ww] = self.dims;
        &mut self.v[((n * cc + c) * hh + y) * ww + x]
    }
}

/// Zero-padded cross-correlation by direct summation.
pub fn conv(x: &Arr, w: &Arr, bias: Option<&[f64]>, stride: usize, pad: usize) -> Arr {
    let [n, c, h, wd] = x.dims;
    let [k, wc, kh, kw] = w.dims;
    assert_eq!(c, wc);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Arr::zeros([n, k, oh, ow]);
    for s in 0..n {
        for o in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(s, ci, iy as usize, ix as usize) * w.at(o, ci, dy, dx);
                            }
                        }
                    }
                    *out.at_mut(s, o, oy, ox) = acc;
                }
            }
        }
    }
    out
}

/// Batch normalization with batch statistics (biased variance).
pub fn batch_norm(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> Arr {
    let [n, c, h, w] = x.dims;
    let mut out = x.clone();
    let count = (n * h * w) as f64;
    for ch in 0..c {
        let mut vals = Vec::new();
        for s in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    vals.push(x.at(s, ch, y, xx));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / count;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        for s in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    *out.at_mut(s, ch, y, xx) = gamma[ch] * (x.at(s, ch, y, xx) - mean) / (var + eps).sqrt() + beta[ch];
                }
            }
        }
    }
    out
}

pub fn relu(x: &Arr) -> Arr {
    Arr {
        dims: x.dims,
        v: x.v.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    assert_eq!(a.dims, b.dims);
    Arr {
        dims: a.dims,
        v: a.v.iter().zip(&b.v).map(|(x, y)| x + y).collect(),
    }
}

/// `[n, c, h, w] → n × c` spatial means.
pub fn gap(x: &Arr) -> Vec<Vec<f64>> {
    let [n, c, h, w] = x.dims;
    (0..n)
        .map(|s| {
            (0..c)
                .map(|ch| {
                    let mut acc = 0.0;
                    for y in 0..h {
                        for xx in 0..w {
                            acc += x.at(s, ch, y, xx);
                        }
                    }
                    acc / (h * w) as f64
                })
                .collect()
        })
        .collect()
}

/// `rows · Wᵀ + b` with `W` row-major `[k, d]`.
pub fn linear(rows: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let k = b.len();
    rows.iter()
        .map(|r| {
            (0..k)
                .map(|o| b[o] + r.iter().enumerate().map(|(j, x)| x * w[o * r.len() + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn random_arr(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Arr {
    Arr {
        dims,
        v: (0..dims.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub fn to_tensor(a: &Arr) -> Tensor<f64> {
    Tensor::from_vec(&a.dims, a.v.clone()).unwrap()
}

pub fn param_vec(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value(id).data().to_vec()
}

pub fn param_arr(store: &ParamStore<f64>, name: &str) -> Arr {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    Arr::from_tensor(store.value(id))
}

/// A small network over `1×8×8` frames.
pub fn small_config(
    stages: &[(usize, usize)],
    positions: &[(usize, usize)],
    connection: TemporalConnection,
    readout: Readout,
) -> NetworkConfig {
    NetworkConfig {
        stages: stages.iter().map(|&(channels, blocks)| Stage { channels, blocks }).collect(),
        temporal_positions: positions.iter().map(|&(s, b)| BlockPosition::new(s, b)).collect(),
        connection,
        classes: 3,
        input: [1, 8, 8],
        readout,
    }
}

/// Random chunk batch `[n, t, c, h, w]`.
pub fn random_chunks(seed: u64, n: usize, t: usize, input: [usize; 3]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * t * input.iter().product::<usize>();
    Tensor::from_vec(
        &[n, t, input[0], input[1], input[2]],
        (0..len).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Column `t` of a chunk batch as `[n, c, h, w]`.
pub fn column(chunks: &Tensor<f64>, t: usize) -> Arr {
    let s = chunks.shape();
    let (n, tl, frame) = (s[0], s[1], s[2] * s[3] * s[4]);
    let mut v = Vec::with_capacity(n * frame);
    for i in 0..n {
        let base = (i * tl + t) * frame;
        v.extend_from_slice(&chunks.data()[base..base + frame]);
    }
    Arr {
        dims: [n, s[2], s[3], s[4]],
        v,
    }
}

fn conv_bn_relu(store: &ParamStore<f64>, name: &str, x: &Arr, stride: usize) -> Arr {
    let w = param_arr(store, &format!("{name}.weight"));
    let z = conv(x, &w, None, stride, 1);
    relu(&batch_norm(&z, &param_vec(store, &format!("{name}.gamma")), &param_vec(store, &format!("{name}.beta")), 1e-5))
}

/// Logits of `net` (in training mode, i.e. batch statistics per column) for
/// `chunks`, evaluated column by column with the loops above.
pub fn unrolled_logits(net: &RecurrentResidualNet<f64>, chunks: &Tensor<f64>) -> Vec<Vec<f64>> {
    let cfg = net.config();
    let store = net.params();
    let t_len = chunks.shape()[1];
    let temporal: Vec<usize> = cfg.temporal_blocks();
    // Previous column's block inputs.
    let mut prev_inputs: Vec<Option<Arr>> = vec![None; cfg.block_count()];
    let mut pooled = Vec::new();
    for t in 0..t_len {
        let mut h = conv_bn_relu(store, "stem", &column(chunks, t), 1);
        let mut flat = 0;
        for (si, stage) in cfg.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let name = format!("stage{si}.block{bi}");
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let f = conv_bn_relu(store, &format!("{name}.conv2"), &conv_bn_relu(store, &format!("{name}.conv1"), &h, stride), 1);
                let skip = |x: &Arr| match store.find(&format!("{name}.skip.weight")) {
                    Some(_) => conv(x, &param_arr(store, &format!("{name}.skip.weight")), None, stride, 0),
                    None => x.clone(),
                };
                let mut y = add(&f, &skip(&h));
                if temporal.contains(&flat) {
                    if let Some(xp) = &prev_inputs[flat] {
                        let term = match cfg.connection {
                            TemporalConnection::IdentityMap => skip(xp),
                            TemporalConnection::ConvLinear => {
                                conv(xp, &param_arr(store, &format!("{name}.temporal.weight")), None, stride, 0)
                            }
                            TemporalConnection::ConvNonlinear => relu(&conv(
                                xp,
                                &param_arr(store, &format!("{name}.temporal.weight")),
                                None,
                                stride,
                                0,
                            )),
                        };
                        y = add(&y, &term);
                    }
                }
                prev_inputs[flat] = Some(h);
                h = y;
                flat += 1;
            }
        }
        if cfg.readout == Readout::MeanColumns || t + 1 == t_len {
            pooled.push(gap(&relu(&h)));
        }
    }
    let m = pooled.len() as f64;
    let features: Vec<Vec<f64>> = (0..pooled[0].len())
        .map(|i| {
            (0..pooled[0][i].len())
                .map(|j| pooled.iter().map(|p| p[i][j]).sum::<f64>() / m)
                .collect()
        })
        .collect();
    linear(&features, &param_vec(store, "head.weight"), &param_vec(store, "head.bias"))
}

#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// `count` valid shapes from a fixed stream.
pub fn random_conv_shapes(count: usize) -> Vec<ConvShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    while out.len() < count {
        let s = ConvShape {
            n: rng.random_range(1..=3),
            c: rng.random_range(1..=4),
            k: rng.random_range(1..=5),
            h: rng.random_range(1..=9),
            w: rng.random_range(1..=9),
            kernel: rng.random_range(1..=4),
            stride: rng.random_range(1..=3),
            pad: rng.random_range(0..=2),
        };
        if s.h + 2 * s.pad >= s.kernel && s.w + 2 * s.pad >= s.kernel {
            out.push(s);
        }
    }
    out
}

/// Max absolute deviation of `conv2d` from [`conv`] in 64 and 32 bits.
pub fn conv_errors(shape: ConvShape, seed: u64, with_bias: bool) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_arr(&mut rng, [shape.n, shape.c, shape.h, shape.w]);
    let w = random_arr(&mut rng, [shape.k, shape.c, shape.kernel, shape.kernel]);
    let bias: Vec<f64> = (0..shape.k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = rrn_core::ops::ConvSpec::new(shape.kernel, shape.stride, shape.pad);
    let b = with_bias.then_some(bias.as_slice());

    let expected = conv(&x, &w, b, shape.stride, shape.pad);
    let bt = Tensor::from_vec(&[shape.k], bias.clone()).unwrap();
    let got64 = rrn_core::ops::conv2d(&to_tensor(&x), &to_tensor(&w), with_bias.then_some(&bt), &spec).unwrap();
    assert_eq!(got64.shape(), expected.dims, "{shape:?}");
    let err64 = max_diff(got64.data().iter().copied(), &expected);

    // The 32-bit kernel sees the same inputs rounded to f32; the oracle runs
    // on the rounded values in f64.
    let round = |a: &Arr| Arr {
        dims: a.dims,
        v: a.v.iter().map(|&v| v as f32 as f64).collect(),
    };
    let (x32, w32) = (round(&x), round(&w));
    let b32: Vec<f64> = bias.iter().map(|&v| v as f32 as f64).collect();
    let expected32 = conv(&x32, &w32, with_bias.then_some(b32.as_slice()), shape.stride, shape.pad);
    let t32 = |a: &Arr| Tensor::from_vec(&a.dims, a.v.iter().map(|&v| v as f32).collect()).unwrap();
    let bt32 = Tensor::from_vec(&[shape.k], b32.iter().map(|&v| v as f32).collect()).unwrap();
    let got32 = rrn_core::ops::conv2d(&t32(&x32), &t32(&w32), with_bias.then_some(&bt32), &spec).unwrap();
    let err32 = max_diff(got32.data().iter().map(|&v| v as f64), &expected32);
    (err64, err32)
}

fn max_diff(got: impl Iterator<Item = f64>, expected: &Arr) -> f64 {
    got.zip(&expected.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
