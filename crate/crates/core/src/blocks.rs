//! Spatial residual blocks and their temporal extension.
//!
//! A block computes `y = F(x) + skip(x)` where `F` is two
//! conv → batch-norm → ReLU layers and `skip` is the identity, or a strided
//! 1×1 projection when the block changes shape. A temporal block additionally
//! adds a term built from the same block's input in the previous time column:
//!
//! | connection        | temporal term            |
//! |-------------------|--------------------------|
//! | `IdentityMap`     | `skip(x_prev)`           |
//! | `ConvLinear`      | `x_prev ∗ W_s`           |
//! | `ConvNonlinear`   | `relu(x_prev ∗ W_s)`     |
//!
//! `W_s` is a bias-free 1×1 convolution (with the block's stride) shared by all
//! time steps. For blocks that keep their shape `skip(x_prev) == x_prev`.

use alloc::format;
use alloc::string::String;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::ops::{conv2d, BatchNormStats, ConvSpec, NormMode};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemporalConnection {
    IdentityMap,
    ConvLinear,
    ConvNonlinear,
}

impl TemporalConnection {
    pub const ALL: [TemporalConnection; 3] = [
        TemporalConnection::IdentityMap,
        TemporalConnection::ConvLinear,
        TemporalConnection::ConvNonlinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemporalConnection::IdentityMap => "identity",
            TemporalConnection::ConvLinear => "linear",
            TemporalConnection::ConvNonlinear => "nonlinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn has_weights(self) -> bool {
        self != TemporalConnection::IdentityMap
    }
}

pub(crate) fn kaiming<S: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<S> {
    let std = libm::sqrt(gain / fan_in as f64);
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| S::of(rng.sample::<f64, _>(StandardNormal) * std))
        .collect();
    Tensor::from_vec(shape, data).expect("positive shape")
}

/// Bias-free convolution followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<S> {
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BatchNormStats<S>,
    pub spec: ConvSpec,
    pub name: String,
}

impl<S: Real> ConvBnRelu<S> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let spec = ConvSpec::new(3, stride, 1);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(rng, &[out_ch, in_ch, 3, 3], in_ch * 9, 2.0),
        );
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[out_ch], S::one()).unwrap());
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[out_ch]).unwrap());
        Self {
            weight,
            gamma,
            beta,
            stats: BatchNormStats::new(out_ch),
            spec,
            name: String::from(name),
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: NodeId,
        mode: NormMode,
    ) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let z = tape.conv2d(x, w, None, self.spec)?;
        let (g, b) = (tape.param(store, self.gamma), tape.param(store, self.beta));
        let n = tape.batch_norm(z, g, b, &mut self.stats, mode)?;
        Ok(tape.relu(n))
    }
}

/// Nodes a block leaves behind for the next time column.
#[derive(Clone, Copy, Debug)]
pub struct Carry {
    /// Block input `x_t`.
    pub input: NodeId,
    /// `skip(x_t)`.
    pub shortcut: NodeId,
}

#[derive(Clone, Debug)]
pub struct SpatialResidualBlock<S> {
    pub layers: [ConvBnRelu<S>; 2],
    /// 1×1 projection used when the block changes shape.
    pub projection: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl<S: Real> SpatialResidualBlock<S> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let l1 = ConvBnRelu::new(store, rng, &format!("{name}.conv1"), in_ch, out_ch, stride);
        let l2 = ConvBnRelu::new(store, rng, &format!("{name}.conv2"), out_ch, out_ch, 1);
        let projection = (in_ch != out_ch || stride != 1).then(|| {
            store.add(
                format!("{name}.skip.weight"),
                kaiming(rng, &[out_ch, in_ch, 1, 1], in_ch, 1.0),
            )
        });
        Self {
            layers: [l1, l2],
            projection,
            in_channels: in_ch,
            out_channels: out_ch,
            stride,
        }
    }

    pub fn residual(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: NodeId,
        mode: NormMode,
    ) -> Result<NodeId> {
        let h = self.layers[0].forward(tape, store, x, mode)?;
        self.layers[1].forward(tape, store, h, mode)
    }

    pub fn shortcut(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: NodeId) -> Result<NodeId> {
        match self.projection {
            None => Ok(x),
            Some(p) => {
                let w = tape.param(store, p);
                tape.conv2d(x, w, None, ConvSpec::new(1, self.stride, 0))
            }
        }
    }

    /// `F(x) + skip(x)`, also returning the carry for the next column.
    pub fn forward(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: NodeId,
        mode: NormMode,
    ) -> Result<(NodeId, Carry)> {
        let f = self.residual(tape, store, x, mode)?;
        let s = self.shortcut(tape, store, x)?;
        let y = tape.add(f, s).map_err(|_| Error::DimensionMismatch {
            op: "spatial_forward",
            axis: "residual vs skip",
            expected: tape.value(s).len(),
            found: tape.value(f).len(),
        })?;
        Ok((y, Carry { input: x, shortcut: s }))
    }
}

#[derive(Clone, Debug)]
pub struct TemporalResidualBlock<S> {
    pub base: SpatialResidualBlock<S>,
    /// `None` for blocks without a temporal connection.
    pub connection: Option<TemporalConnection>,
    /// `W_s`, present for the convolutional connection types.
    pub temporal_weight: Option<ParamId>,
}

impl<S: Real> TemporalResidualBlock<S> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        connection: Option<TemporalConnection>,
    ) -> Self {
        let base = SpatialResidualBlock::new(store, rng, name, in_ch, out_ch, stride);
        let temporal_weight = connection.filter(|c| c.has_weights()).map(|_| {
            store.add(
                format!("{name}.temporal.weight"),
                kaiming(rng, &[out_ch, in_ch, 1, 1], in_ch, 1.0),
            )
        });
        Self {
            base,
            connection,
            temporal_weight,
        }
    }

    fn temporal_term(&self, tape: &mut Tape<S>, store: &ParamStore<S>, prev: Carry) -> Result<NodeId> {
        let conv = |tape: &mut Tape<S>| -> Result<NodeId> {
            let w = tape.param(store, self.temporal_weight.expect("conv connection has W_s"));
            tape.conv2d(prev.input, w, None, ConvSpec::new(1, self.base.stride, 0))
        };
        match self.connection.expect("temporal term requires a connection") {
            TemporalConnection::IdentityMap => Ok(prev.shortcut),
            TemporalConnection::ConvLinear => conv(tape),
            TemporalConnection::ConvNonlinear => {
                let z = conv(tape)?;
                Ok(tape.relu(z))
            }
        }
    }

    /// One time column of the block. `prev` is the same block's carry from
    /// column `t − 1`, or `None` at the chunk boundary (a zero temporal input,
    /// which contributes nothing).
    pub fn forward(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: NodeId,
        prev: Option<Carry>,
        mode: NormMode,
    ) -> Result<(NodeId, Carry)> {
        let (y, carry) = self.base.forward(tape, store, x, mode)?;
        match (self.connection, prev) {
            (Some(_), Some(prev)) => {
                let expected = tape.value(x).shape().to_vec();
                let found = tape.value(prev.input).shape();
                if found != expected.as_slice() {
                    return Err(shape_error(&expected, found));
                }
                let term = self.temporal_term(tape, store, prev)?;
                Ok((tape.add(y, term)?, carry))
            }
            _ => Ok((y, carry)),
        }
    }

    /// Forward for a single column on plain tensors: `F(x_t) + skip(x_t)`.
    pub fn spatial_forward(&mut self, store: &ParamStore<S>, x: &Tensor<S>, mode: NormMode) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let (y, _) = self.base.forward(&mut tape, store, xn, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Forward for column `t` given the block input of column `t − 1`.
    pub fn temporal_forward(
        &mut self,
        store: &ParamStore<S>,
        x_t: &Tensor<S>,
        x_prev: &Tensor<S>,
        mode: NormMode,
    ) -> Result<Tensor<S>> {
        if x_t.shape() != x_prev.shape() {
            return Err(shape_error(x_t.shape(), x_prev.shape()));
        }
        let mut tape = Tape::new();
        let prev_in = tape.input(x_prev.clone());
        let prev_skip = self.base.shortcut(&mut tape, store, prev_in)?;
        let xn = tape.input(x_t.clone());
        let carry = Carry {
            input: prev_in,
            shortcut: prev_skip,
        };
        let (y, _) = self.forward(&mut tape, store, xn, Some(carry), mode)?;
        Ok(tape.value(y).clone())
    }
}

fn shape_error(expected: &[usize], found: &[usize]) -> Error {
    let axis = expected
        .iter()
        .zip(found)
        .position(|(a, b)| a != b)
        .unwrap_or(0);
    Error::DimensionMismatch {
        op: "temporal_forward",
        axis: ["batch", "channels", "height", "width"].get(axis).copied().unwrap_or("rank"),
        expected: expected.get(axis).copied().unwrap_or(expected.len()),
        found: found.get(axis).copied().unwrap_or(found.len()),
    }
}

/// Strided 1×1 projection `[N,C,H,W] → [N,2C,H/2,W/2]` used on downsampling
/// skip paths.
pub fn downsample_skip<S: Real>(x: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
    let [_, c, h, w] = x.dims4("downsample_skip")?;
    for (axis, extent) in [("height", h), ("width", w)] {
        if extent % 2 != 0 {
            return Err(Error::OddExtent {
                op: "downsample_skip",
                axis,
                extent,
            });
        }
    }
    let expected = [2 * c, c, 1, 1];
    if weight.shape() != expected {
        let [k, wc, kh, kw] = weight.dims4("downsample_skip weight")?;
        let (axis, e, f) = [("out_channels", 2 * c, k), ("channels", c, wc), ("kernel_h", 1, kh), ("kernel_w", 1, kw)]
            .into_iter()
            .find(|(_, e, f)| e != f)
            .expect("some extent differs");
        return Err(Error::DimensionMismatch {
            op: "downsample_skip",
            axis,
            expected: e,
            found: f,
        });
    }
    conv2d(x, weight, None, &ConvSpec::new(1, 2, 0))
}

/// Trainable scalar count of the blocks' temporal connections.
pub fn temporal_parameter_count<S: Real>(blocks: &[TemporalResidualBlock<S>], store: &ParamStore<S>) -> usize {
    blocks
        .iter()
        .filter_map(|b| b.temporal_weight)
        .map(|id| store.value(id).len())
        .sum()
}
