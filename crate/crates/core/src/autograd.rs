//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass together
//! with the values its backward rule needs. Parameters live outside the tape
//! in a [`ParamStore`]; asking the tape for the same parameter twice returns
//! the same leaf node, so a weight used in every time column of an unrolled
//! network is a single node whose gradient is the sum over its uses.
//!
//! Gradients accumulate into [`Parameter::grad`]; callers zero them with
//! [`ParamStore::zero_grad`] between updates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{
    self, batch_norm_backward, batch_norm_forward, conv2d_backward, conv2d_forward,
    global_avg_pool_backward, linear_backward, mean_rows_backward, softmax_cross_entropy_backward,
    BatchNormCache, BatchNormStats, ConvSpec, NormMode,
};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    /// Frozen parameters receive no gradient and are skipped by optimizers
    /// and gradient checks.
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = value.zeros_like();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.value.len()).sum()
    }
}

/// Primitive kinds, used for record counting and fault injection in tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    BatchNorm,
    Relu,
    Sigmoid,
    Tanh,
    Add,
    Sub,
    Mul,
    Affine,
    GlobalAvgPool,
    MeanRows,
    Row,
    Linear,
    SoftmaxCrossEntropy,
    Sum,
}

enum Op<S> {
    Input,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
        cols: Vec<S>,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: BatchNormCache<S>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        input: NodeId,
        scale: S,
    },
    GlobalAvgPool(NodeId),
    MeanRows(NodeId),
    Row {
        input: NodeId,
        index: usize,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<S>,
    },
    Sum(NodeId),
}

impl<S> Op<S> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Input | Op::Param(_) => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Affine { .. } => OpKind::Affine,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::Row { .. } => OpKind::Row,
            Op::Linear { .. } => OpKind::Linear,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Sum(_) => OpKind::Sum,
        })
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradients of the loss with respect to every node reached by a backward
/// pass; nodes with no path to the loss have none.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }

    /// Euclidean norm of a node's gradient; zero when unreached.
    pub fn norm(&self, node: NodeId) -> S {
        self.get(node)
            .map(|g| g.data().iter().map(|&v| v * v).sum::<S>().sqrt())
            .unwrap_or_else(S::zero)
    }
}

/// Record of a forward computation, in topological order.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_nodes: BTreeMap<ParamId, NodeId>,
    fault: Option<OpKind>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of `kind` by scaling the gradient it
    /// propagates; gradient checks must then fail.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Number of recorded primitive operations (leaves excluded).
    pub fn records(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.kind().is_some()).count()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == Some(kind)).count()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor<S> {
        &self.nodes[node.0].value
    }

    /// Sign pattern of every ReLU input, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > S::zero()));
            }
        }
        out
    }

    /// Smallest `|x|` over all ReLU inputs.
    pub fn relu_margin(&self) -> Option<S> {
        let mut margin: Option<S> = None;
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                for &v in self.nodes[x.0].value.data() {
                    margin = Some(margin.map_or(v.abs(), |m| m.min(v.abs())));
                }
            }
        }
        margin
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf holding a constant input; its gradient is reported by
    /// [`Tape::backward`] but not stored anywhere else.
    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(store.value(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, node);
        node
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let (out, cols) = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &spec,
            true,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols,
            },
        ))
    }

    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut BatchNormStats<S>,
        mode: NormMode,
    ) -> Result<NodeId> {
        let (out, cache) = batch_norm_forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = ops::tanh(self.value(x));
        self.push(out, Op::Tanh(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: S, shift: S) -> NodeId {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { input: x, scale })
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::mean_rows(self.value(x))?;
        Ok(self.push(out, Op::MeanRows(x)))
    }

    /// Row `index` of a matrix, as a `[1, D]` matrix.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(x);
        let [_, d] = v.dims2("row")?;
        let out = v.select(index)?.reshape(&[1, d])?;
        Ok(self.push(out, Op::Row { input: x, index }))
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let out = ops::linear(self.value(x), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(
            out,
            Op::Linear {
                input: x,
                weight,
                bias,
            },
        ))
    }

    /// Mean cross-entropy of `labels` under the row softmax of `logits`.
    /// Returns the scalar loss node; the probabilities are available through
    /// [`Tape::probs`].
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Probabilities saved by a softmax cross-entropy node.
    pub fn probs(&self, loss: NodeId) -> Option<&Tensor<S>> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Propagates `d loss / d node` to every node on a path to `loss`.
    ///
    /// Parameter gradients are added into `store`; the tape is left intact,
    /// so calling this twice doubles the accumulated parameter gradients.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<S>) -> Result<Gradients<S>> {
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        if self.nodes.is_empty() {
            return Ok(Gradients { grads });
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        grads[loss.0] = Some(loss_value.map(|_| S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let fault = match (self.fault, node.op.kind()) {
                (Some(f), Some(k)) if f == k => Some(S::of(1.5)),
                _ => None,
            };
            let mut emit = |id: NodeId, t: Tensor<S>| -> Result<()> {
                let t = match fault {
                    Some(k) => t.scale(k),
                    None => t,
                };
                accumulate(&mut grads, id, t)
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    if !p.frozen {
                        p.grad.add_assign(&g)?;
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    spec,
                    cols,
                } => {
                    let (gi, gw, gb) = conv2d_backward(
                        self.value(*input).shape(),
                        self.value(*weight),
                        cols,
                        spec,
                        &g,
                    )?;
                    emit(*input, gi)?;
                    emit(*weight, gw)?;
                    if let Some(b) = bias {
                        emit(*b, gb)?;
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    cache,
                } => {
                    let gamma_v = self.value(*gamma);
                    let (gx, dg, db) = batch_norm_backward(cache, gamma_v.data(), &g)?;
                    emit(*input, gx)?;
                    emit(*gamma, Tensor::from_vec(gamma_v.shape(), dg)?)?;
                    emit(*beta, Tensor::from_vec(gamma_v.shape(), db)?)?;
                }
                Op::Relu(x) => {
                    // subgradient 0 at exactly 0
                    let gx = self.value(*x).zip_map(&g, "relu", |v, gv| {
                        if v > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    })?;
                    emit(*x, gx)?;
                }
                Op::Sigmoid(x) => {
                    let gx = node.value.zip_map(&g, "sigmoid", |y, gv| gv * y * (S::one() - y))?;
                    emit(*x, gx)?;
                }
                Op::Tanh(x) => {
                    let gx = node.value.zip_map(&g, "tanh", |y, gv| gv * (S::one() - y * y))?;
                    emit(*x, gx)?;
                }
                Op::Add(a, b) => {
                    emit(*a, g.clone())?;
                    emit(*b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    emit(*a, g.clone())?;
                    emit(*b, g.scale(-S::one()))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), "mul", |gv, bv| gv * bv)?;
                    let gb = g.zip_map(self.value(*a), "mul", |gv, av| gv * av)?;
                    emit(*a, ga)?;
                    emit(*b, gb)?;
                }
                Op::Affine { input, scale } => emit(*input, g.scale(*scale))?,
                Op::GlobalAvgPool(x) => {
                    emit(*x, global_avg_pool_backward(self.value(*x).shape(), &g)?)?;
                }
                Op::MeanRows(x) => emit(*x, mean_rows_backward(self.value(*x).shape(), &g)?)?,
                Op::Row { input, index } => {
                    let src = self.value(*input);
                    let d = src.shape()[1];
                    let mut gx = src.zeros_like();
                    gx.data_mut()[index * d..(index + 1) * d].copy_from_slice(g.data());
                    emit(*input, gx)?;
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (gx, gw, gb) = linear_backward(self.value(*input), self.value(*weight), &g)?;
                    emit(*input, gx)?;
                    emit(*weight, gw)?;
                    if let Some(b) = bias {
                        emit(*b, gb)?;
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.data()[0];
                    emit(*logits, softmax_cross_entropy_backward(probs, labels, scale))?;
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    emit(*x, self.value(*x).map(|_| gv))?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Real>(grads: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
