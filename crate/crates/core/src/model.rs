//! The recurrent residual network: a residual network replicated over the `T`
//! frames of a chunk with shared weights, where selected blocks add a skip
//! connection from the previous time column.
//!
//! Column layout: stem (3×3 conv → BN → ReLU), then the residual blocks of
//! every stage, then ReLU → global average pool → linear classifier. The
//! first block of every stage after the first halves the spatial extent.
//! Column `t = 0` receives no temporal input (the zero boundary), so a chunk
//! of one frame is exactly the plain residual network.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::blocks::{kaiming, Carry, ConvBnRelu, TemporalConnection, TemporalResidualBlock};
use crate::error::{Error, Result};
use crate::ops::{softmax, BatchNormStats, NormMode};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub channels: usize,
    pub blocks: usize,
}

/// A block addressed by stage and index within the stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockPosition {
    pub stage: usize,
    pub block: usize,
}

impl BlockPosition {
    pub const fn new(stage: usize, block: usize) -> Self {
        Self { stage, block }
    }
}

/// How a chunk's class scores are read from the unrolled columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// Classify from the final column, which sees the full context.
    LastColumn,
    /// Average the pooled features of all columns.
    MeanColumns,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Readout::LastColumn => "last",
            Readout::MeanColumns => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "last" => Some(Readout::LastColumn),
            "mean" => Some(Readout::MeanColumns),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub stages: Vec<Stage>,
    pub temporal_positions: Vec<BlockPosition>,
    pub connection: TemporalConnection,
    pub classes: usize,
    /// `(C, H, W)` of one frame.
    pub input: [usize; 3],
    pub readout: Readout,
}

impl NetworkConfig {
    /// Four single-block stages of 8/16/32/64 channels over 1×32×32 frames,
    /// with one identity connection in the last stage.
    pub fn desk_default(classes: usize) -> Self {
        Self {
            stages: [8, 16, 32, 64]
                .into_iter()
                .map(|channels| Stage { channels, blocks: 1 })
                .collect(),
            temporal_positions: vec![BlockPosition::new(3, 0)],
            connection: TemporalConnection::IdentityMap,
            classes,
            input: [1, 32, 32],
            readout: Readout::LastColumn,
        }
    }

    pub fn block_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Index of `pos` in the flattened block list.
    pub fn flat_index(&self, pos: BlockPosition) -> Option<usize> {
        let stage = self.stages.get(pos.stage)?;
        (pos.block < stage.blocks)
            .then(|| self.stages[..pos.stage].iter().map(|s| s.blocks).sum::<usize>() + pos.block)
    }

    /// Flat indices of blocks carrying a temporal connection.
    pub fn temporal_blocks(&self) -> Vec<usize> {
        self.temporal_positions.iter().filter_map(|&p| self.flat_index(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.blocks == 0) {
            return bad("stage channels and block counts must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.input.iter().any(|&d| d == 0) {
            return bad(format!("input extents must be positive, got {:?}", self.input));
        }
        let downsamples = self.stages.len() - 1;
        let (h, w) = (self.input[1], self.input[2]);
        if (h >> downsamples) == 0 || (w >> downsamples) == 0 {
            return bad(format!("input {h}x{w} too small for {} stages", self.stages.len()));
        }
        for (i, &p) in self.temporal_positions.iter().enumerate() {
            if self.flat_index(p).is_none() {
                return bad(format!("temporal position {}:{} out of range", p.stage, p.block));
            }
            if self.temporal_positions[..i].contains(&p) {
                return bad(format!("temporal position {}:{} repeated", p.stage, p.block));
            }
        }
        Ok(())
    }
}

/// Frames per chunk and frame sampling stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkSpec {
    /// `T`, the temporal context of one chunk.
    pub context: usize,
    /// `s`, the step between sampled frames.
    pub stride: usize,
}

impl ChunkSpec {
    pub fn new(context: usize, stride: usize) -> Result<Self> {
        if context == 0 {
            return Err(Error::Config("chunk context T must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::Config("frame stride must be positive".into()));
        }
        Ok(Self { context, stride })
    }

    /// Raw-frame distance between the first and last frame of a chunk.
    pub fn effective_range(&self) -> usize {
        effective_range(self)
    }

    /// Number of frames left after sampling `frames` raw frames.
    pub fn sampled_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) / self.stride + 1
        }
    }

    /// `M`, the number of complete chunks in a video of `frames` raw frames.
    pub fn chunks_per_video(&self, frames: usize) -> usize {
        self.sampled_len(frames) / self.context
    }

    /// Smallest raw video length yielding one chunk.
    pub fn min_frames(&self) -> usize {
        self.effective_range() + 1
    }
}

/// `(T − 1)·s`.
pub fn effective_range(spec: &ChunkSpec) -> usize {
    (spec.context - 1) * spec.stride
}

/// Class distribution for one chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPrediction<S> {
    pub probs: Tensor<S>,
    pub logits: Tensor<S>,
}

/// Tape nodes produced by one unrolled forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[N, K]` class scores.
    pub logits: NodeId,
    /// Input node of every column, `[N, C, H, W]` each.
    pub frames: Vec<NodeId>,
    /// Output node of every block in every column.
    pub block_outputs: Vec<Vec<NodeId>>,
}

#[derive(Clone, Debug)]
pub struct RecurrentResidualNet<S> {
    config: NetworkConfig,
    params: ParamStore<S>,
    stem: ConvBnRelu<S>,
    blocks: Vec<TemporalResidualBlock<S>>,
    head_weight: ParamId,
    head_bias: ParamId,
    mode: NormMode,
}

impl<S: Real> RecurrentResidualNet<S> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c0 = config.stages[0].channels;
        let stem = ConvBnRelu::new(&mut params, &mut rng, "stem", config.input[0], c0, 1);
        let temporal = config.temporal_blocks();
        let mut blocks = Vec::with_capacity(config.block_count());
        let mut in_ch = c0;
        for (si, stage) in config.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let connection = temporal.contains(&blocks.len()).then_some(config.connection);
                blocks.push(TemporalResidualBlock::new(
                    &mut params,
                    &mut rng,
                    &format!("stage{si}.block{bi}"),
                    in_ch,
                    stage.channels,
                    stride,
                    connection,
                ));
                in_ch = stage.channels;
            }
        }
        let head_weight = params.add(
            "head.weight",
            kaiming(&mut rng, &[config.classes, in_ch], in_ch, 1.0),
        );
        let head_bias = params.add("head.bias", Tensor::zeros(&[config.classes])?);
        Ok(Self {
            config,
            params,
            stem,
            blocks,
            head_weight,
            head_bias,
            mode: NormMode::Train,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[TemporalResidualBlock<S>] {
        &self.blocks
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.mode = mode;
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Batch-norm layers by name, in construction order.
    pub fn batch_norm_stats(&self) -> Vec<(&str, &BatchNormStats<S>)> {
        let mut out = vec![(self.stem.name.as_str(), &self.stem.stats)];
        for b in &self.blocks {
            for l in &b.base.layers {
                out.push((l.name.as_str(), &l.stats));
            }
        }
        out
    }

    pub fn batch_norm_stats_mut(&mut self) -> Vec<(&str, &mut BatchNormStats<S>)> {
        let mut out = vec![(self.stem.name.as_str(), &mut self.stem.stats)];
        for b in &mut self.blocks {
            for l in &mut b.base.layers {
                out.push((l.name.as_str(), &mut l.stats));
            }
        }
        out
    }

    fn check_frame(&self, shape: &[usize]) -> Result<()> {
        for (i, axis) in ["channels", "height", "width"].into_iter().enumerate() {
            if shape[i] != self.config.input[i] {
                return Err(Error::DimensionMismatch {
                    op: "unroll_forward",
                    axis,
                    expected: self.config.input[i],
                    found: shape[i],
                });
            }
        }
        Ok(())
    }

    /// Unrolled forward pass over a batch of chunks `[N, T, C, H, W]`.
    pub fn forward(&mut self, tape: &mut Tape<S>, chunks: &Tensor<S>) -> Result<ForwardOutput> {
        chunks.expect_rank(5, "unroll_forward")?;
        let shape = chunks.shape();
        let (n, t_len) = (shape[0], shape[1]);
        self.check_frame(&shape[2..])?;
        let frame_len: usize = shape[2..].iter().product();
        let frame_shape = [n, shape[2], shape[3], shape[4]];

        let mode = self.mode;
        let mut frames = Vec::with_capacity(t_len);
        let mut block_outputs = Vec::with_capacity(t_len);
        let mut pooled = Vec::with_capacity(t_len);
        let mut prev: Vec<Option<Carry>> = vec![None; self.blocks.len()];
        for t in 0..t_len {
            let mut column = Vec::with_capacity(n * frame_len);
            for s in 0..n {
                let base = (s * t_len + t) * frame_len;
                column.extend_from_slice(&chunks.data()[base..base + frame_len]);
            }
            let x = tape.input(Tensor::from_vec(&frame_shape, column)?);
            frames.push(x);
            let mut h = self.stem.forward(tape, &self.params, x, mode)?;
            let mut outs = Vec::with_capacity(self.blocks.len());
            for (b, block) in self.blocks.iter_mut().enumerate() {
                let (y, carry) = block.forward(tape, &self.params, h, prev[b], mode)?;
                prev[b] = Some(carry);
                outs.push(y);
                h = y;
            }
            block_outputs.push(outs);
            if self.config.readout == Readout::MeanColumns || t + 1 == t_len {
                let r = tape.relu(h);
                pooled.push(tape.global_avg_pool(r)?);
            }
        }
        let features = match pooled.len() {
            1 => pooled[0],
            m => {
                let mut acc = pooled[0];
                for &p in &pooled[1..] {
                    acc = tape.add(acc, p)?;
                }
                tape.affine(acc, S::one() / S::of_usize(m), S::zero())
            }
        };
        let w = tape.param(&self.params, self.head_weight);
        let b = tape.param(&self.params, self.head_bias);
        let logits = tape.linear(features, w, Some(b))?;
        Ok(ForwardOutput {
            logits,
            frames,
            block_outputs,
        })
    }

    /// Mean cross-entropy of a chunk batch against per-chunk labels.
    pub fn loss(
        &mut self,
        tape: &mut Tape<S>,
        chunks: &Tensor<S>,
        labels: &[usize],
    ) -> Result<(NodeId, ForwardOutput)> {
        let out = self.forward(tape, chunks)?;
        let loss = tape.softmax_cross_entropy(out.logits, labels)?;
        Ok((loss, out))
    }

    fn single(chunk: &Tensor<S>) -> Result<Tensor<S>> {
        chunk.expect_rank(4, "unroll_forward")?;
        let mut shape = vec![1];
        shape.extend_from_slice(chunk.shape());
        chunk.clone().reshape(&shape)
    }

    /// Class distribution for one chunk `[T, C, H, W]`.
    pub fn unroll_forward(&mut self, chunk: &Tensor<S>) -> Result<ChunkPrediction<S>> {
        let batch = Self::single(chunk)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &batch)?;
        let logits = tape.value(out.logits).clone();
        let probs = softmax(&logits)?;
        let k = self.config.classes;
        Ok(ChunkPrediction {
            probs: probs.reshape(&[k])?,
            logits: logits.reshape(&[k])?,
        })
    }

    pub fn chunk_loss(&mut self, chunk: &Tensor<S>, label: usize) -> Result<S> {
        let batch = Self::single(chunk)?;
        let mut tape = Tape::new();
        let (loss, _) = self.loss(&mut tape, &batch, &[label])?;
        Ok(tape.value(loss).data()[0])
    }

    /// `‖∂ chunk_loss / ∂ x_t‖` for every frame of the chunk. Parameter
    /// gradients are left untouched.
    pub fn frame_gradient_norms(&mut self, chunk: &Tensor<S>, label: usize) -> Result<Vec<S>> {
        let batch = Self::single(chunk)?;
        let mut tape = Tape::new();
        let (loss, out) = self.loss(&mut tape, &batch, &[label])?;
        let mut scratch = self.params.clone();
        let grads = tape.backward(loss, &mut scratch)?;
        Ok(out.frames.iter().map(|&f| grads.norm(f)).collect())
    }

    /// Pooled features of independent frames `[N, C, H, W]` after the blocks
    /// of stages `0..=through_stage`, ignoring temporal connections.
    pub fn frame_features(&mut self, frames: &Tensor<S>, through_stage: usize) -> Result<Tensor<S>> {
        let [_, c, h, w] = frames.dims4("frame_features")?;
        self.check_frame(&[c, h, w])?;
        if through_stage >= self.config.stages.len() {
            return Err(Error::Config(format!(
                "feature stage {through_stage} out of range for {} stages",
                self.config.stages.len()
            )));
        }
        let last = self.config.stages[..=through_stage].iter().map(|s| s.blocks).sum::<usize>();
        let mode = self.mode;
        let mut tape = Tape::new();
        let x = tape.input(frames.clone());
        let mut h = self.stem.forward(&mut tape, &self.params, x, mode)?;
        for block in &mut self.blocks[..last] {
            h = block.base.forward(&mut tape, &self.params, h, mode)?.0;
        }
        let r = tape.relu(h);
        let p = tape.global_avg_pool(r)?;
        Ok(tape.value(p).clone())
    }

    /// Copies every parameter and batch-norm statistic into a model of
    /// another precision.
    pub fn cast<T: Real>(&self) -> RecurrentResidualNet<T> {
        let mut out = RecurrentResidualNet::<T>::new(self.config.clone(), 0).expect("validated config");
        for (dst, src) in out.params.iter_mut().zip(self.params.iter()) {
            dst.value = src.value.cast();
            dst.frozen = src.frozen;
        }
        for ((_, dst), (_, src)) in out.batch_norm_stats_mut().into_iter().zip(self.batch_norm_stats()) {
            dst.running_mean = src.running_mean.iter().map(|v| T::of(v.as_f64())).collect();
            dst.running_var = src.running_var.iter().map(|v| T::of(v.as_f64())).collect();
            dst.momentum = T::of(src.momentum.as_f64());
            dst.epsilon = T::of(src.epsilon.as_f64());
            dst.tracked = src.tracked;
        }
        out.mode = self.mode;
        out
    }
}

/// Which past frames each column's output can depend on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reachability {
    /// `matrix[t][k]`: does the output of column `t` (0-based) depend on the
    /// frame of column `t − k`.
    pub matrix: Vec<Vec<bool>>,
}

impl Reachability {
    pub fn reaches(&self, t: usize, k: usize) -> bool {
        self.matrix.get(t).and_then(|row| row.get(k)).copied().unwrap_or(false)
    }

    /// Largest `k` reachable from the last column, i.e. context − 1.
    pub fn max_lag(&self) -> usize {
        self.matrix
            .last()
            .map(|row| row.iter().rposition(|&r| r).unwrap_or(0))
            .unwrap_or(0)
    }
}

/// Structural dependency of block outputs on past frames, found by walking
/// the unrolled graph backwards from each column's output.
///
/// Graph nodes are `(column, layer)` where layer `l` is the input of block
/// `l` (layer `0` is the frame, layer `L` the column output). Within a
/// column `(c, l + 1)` depends on `(c, l)`; a temporal block `l` adds an edge
/// from `(c, l + 1)` to `(c − 1, l)`.
pub fn temporal_reachability(config: &NetworkConfig, context: usize) -> Result<Reachability> {
    if context == 0 {
        return Err(Error::Config("chunk context T must be positive".into()));
    }
    let layers = config.block_count();
    let temporal = config.temporal_blocks();
    let mut matrix = Vec::with_capacity(context);
    for t in 0..context {
        let mut seen = vec![vec![false; layers + 1]; context];
        let mut queue = VecDeque::from([(t, layers)]);
        seen[t][layers] = true;
        while let Some((c, l)) = queue.pop_front() {
            if l == 0 {
                continue;
            }
            let mut visit = |c: usize, l: usize| {
                if !seen[c][l] {
                    seen[c][l] = true;
                    queue.push_back((c, l));
                }
            };
            visit(c, l - 1);
            if c > 0 && temporal.contains(&(l - 1)) {
                visit(c - 1, l - 1);
            }
        }
        matrix.push((0..context).map(|k| k <= t && seen[t - k][0]).collect());
    }
    Ok(Reachability { matrix })
}
