//! Frame-feature baselines: order-free average pooling and a GRU.
//!
//! Both consume per-frame features from a frozen [`FeatureExtractor`], a
//! spatial-only residual network pretrained to tell which quadrant of the
//! canvas a blob sits in. Frames are encoded one at a time in inference
//! mode, so a frame's features never depend on its neighbours. Encoded
//! chunks have shape `[T, D]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::blocks::kaiming;
use crate::data::render_blob;
use crate::error::{Error, Result};
use crate::inference::{ChunkClassifier, ChunkedVideo};
use crate::model::{NetworkConfig, Readout, RecurrentResidualNet, Stage};
use crate::ops::{column_moments, mean_rows, softmax, NormMode};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::train::{train, Objective, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub network: NetworkConfig,
    /// Features are taken after the blocks of stages `0..=through_stage`.
    pub through_stage: usize,
    /// Labelled single frames used for pretraining.
    pub pretrain_frames: usize,
    pub pretrain: TrainConfig,
    pub blob_sigma: f64,
    pub noise: f64,
}

impl ExtractorConfig {
    /// A small two-stage extractor for `size × size` grayscale frames.
    pub fn small(size: usize) -> Self {
        Self {
            network: NetworkConfig {
                stages: vec![Stage { channels: 8, blocks: 1 }, Stage { channels: 16, blocks: 1 }],
                temporal_positions: Vec::new(),
                connection: crate::blocks::TemporalConnection::IdentityMap,
                classes: 4,
                input: [1, size, size],
                readout: Readout::LastColumn,
            },
            through_stage: 1,
            pretrain_frames: 400,
            pretrain: TrainConfig {
                epochs: 3,
                update_fraction: 0.05,
                ..Default::default()
            },
            blob_sigma: 2.0,
            noise: 0.05,
        }
    }
}

/// Single frames with a blob at a uniform position; the label is the
/// quadrant holding the blob centre.
pub fn quadrant_frames(count: usize, size: usize, sigma: f64, noise: f64, seed: u64) -> Result<Vec<ChunkedVideo>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..count)
        .map(|_| {
            let (x, y) = (rng.random::<f64>() * s, rng.random::<f64>() * s);
            let label = usize::from(x >= s / 2.0) + 2 * usize::from(y >= s / 2.0);
            let mut frame = render_blob(size, x, y, sigma);
            for p in &mut frame {
                let n = rng.sample::<f64, _>(StandardNormal) * noise;
                *p = (*p as f64 + n).clamp(0.0, 1.0) as f32;
            }
            Ok(ChunkedVideo {
                chunks: vec![Tensor::from_vec(&[1, 1, size, size], frame)?],
                label,
            })
        })
        .collect()
}

/// Frozen per-frame encoder with standardized outputs.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    net: RecurrentResidualNet<f32>,
    through_stage: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl FeatureExtractor {
    /// Pretrains the network on [`quadrant_frames`], freezes it and fits the
    /// feature standardization on the pretraining frames.
    pub fn pretrain(cfg: &ExtractorConfig, seed: u64) -> Result<Self> {
        if !cfg.network.temporal_positions.is_empty() {
            return Err(Error::Config("the frame extractor takes no temporal connections".into()));
        }
        let size = cfg.network.input[1];
        let frames = quadrant_frames(cfg.pretrain_frames, size, cfg.blob_sigma, cfg.noise, seed)?;
        let mut net = RecurrentResidualNet::<f32>::new(cfg.network.clone(), seed)?;
        let mut trainer = Trainer::new(TrainConfig { seed, ..cfg.pretrain.clone() }, net.params())?;
        train(&mut net, &mut trainer, &frames, None, |_| {})?;
        Self::from_network(net, cfg.through_stage, &frames)
    }

    /// Freezes `net` and fits the standardization on `calibration` frames.
    pub fn from_network(mut net: RecurrentResidualNet<f32>, through_stage: usize, calibration: &[ChunkedVideo]) -> Result<Self> {
        net.params_mut().freeze_all();
        net.set_mode(NormMode::Eval);
        let mut ext = Self {
            net,
            through_stage,
            mean: Vec::new(),
            std: Vec::new(),
        };
        let mut rows = Vec::new();
        let mut n = 0;
        for v in calibration {
            for c in &v.chunks {
                let f = ext.raw_features(c)?;
                n += f.shape()[0];
                rows.extend_from_slice(f.data());
            }
        }
        if n == 0 {
            return Err(Error::Empty("calibration frames"));
        }
        let d = rows.len() / n;
        let (mean, std) = column_moments(&rows, n, d);
        ext.mean = mean;
        ext.std = std;
        Ok(ext)
    }

    /// Reassembles a frozen extractor from saved parts.
    pub fn from_parts(
        mut net: RecurrentResidualNet<f32>,
        through_stage: usize,
        mean: Vec<f32>,
        std: Vec<f32>,
    ) -> Result<Self> {
        let expected = net.config().stages.get(through_stage).map(|s| s.channels).ok_or_else(|| {
            Error::Config(alloc::format!("feature stage {through_stage} out of range"))
        })?;
        for v in [&mean, &std] {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    op: "feature extractor",
                    axis: "features",
                    expected,
                    found: v.len(),
                });
            }
        }
        net.params_mut().freeze_all();
        net.set_mode(NormMode::Eval);
        Ok(Self {
            net,
            through_stage,
            mean,
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn through_stage(&self) -> usize {
        self.through_stage
    }

    /// Per-dimension mean and standard deviation removed from raw features.
    pub fn standardization(&self) -> (&[f32], &[f32]) {
        (&self.mean, &self.std)
    }

    pub fn network(&self) -> &RecurrentResidualNet<f32> {
        &self.net
    }

    fn raw_features(&mut self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [t, c, h, w] = frames.dims4("encode")?;
        let mut data = Vec::new();
        for i in 0..t {
            let frame = frames.select(i)?.reshape(&[1, c, h, w])?;
            data.extend_from_slice(self.net.frame_features(&frame, self.through_stage)?.data());
        }
        let d = data.len() / t;
        Tensor::from_vec(&[t, d], data)
    }

    /// `[T, C, H, W] → [T, D]`.
    pub fn encode(&mut self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut f = self.raw_features(frames)?;
        let d = self.dim();
        for row in f.data_mut().chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(f)
    }

    /// Replaces every chunk by its encoded features.
    pub fn encode_videos(&mut self, videos: &[ChunkedVideo]) -> Result<Vec<ChunkedVideo>> {
        videos
            .iter()
            .map(|v| {
                Ok(ChunkedVideo {
                    chunks: v.chunks.iter().map(|c| self.encode(c)).collect::<Result<_>>()?,
                    label: v.label,
                })
            })
            .collect()
    }
}

fn feature_dims(chunk: &Tensor<f32>, dim: usize, op: &'static str) -> Result<usize> {
    let [t, d] = chunk.dims2(op)?;
    if d != dim {
        return Err(Error::DimensionMismatch {
            op,
            axis: "features",
            expected: dim,
            found: d,
        });
    }
    Ok(t)
}

fn probs_rows<S: Real>(logits: &Tensor<S>, classes: usize) -> Result<Vec<Vec<f64>>> {
    Ok(softmax(logits)?
        .data()
        .chunks(classes)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect())
}

/// Linear classifier on frame features averaged over the chunk. Blind to
/// frame order by construction.
#[derive(Clone, Debug)]
pub struct AvgPoolClassifier<S> {
    params: ParamStore<S>,
    weight: ParamId,
    bias: ParamId,
    dim: usize,
    classes: usize,
}

impl<S: Real> AvgPoolClassifier<S> {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let weight = params.add("avgpool.weight", kaiming(&mut rng, &[classes, dim], dim, 1.0));
        let bias = params.add("avgpool.bias", Tensor::zeros(&[classes]).expect("positive shape"));
        Self {
            params,
            weight,
            bias,
            dim,
            classes,
        }
    }

    /// Mean feature rows of each chunk, stacked `[B, D]`.
    fn pooled(&self, chunks: &[&Tensor<f32>]) -> Result<Tensor<S>> {
        let mut data = Vec::with_capacity(chunks.len() * self.dim);
        for c in chunks {
            feature_dims(c, self.dim, "avgpool")?;
            data.extend(mean_rows(c)?.data().iter().map(|&v| S::of(v as f64)));
        }
        Tensor::from_vec(&[chunks.len(), self.dim], data)
    }

    fn logits(&self, tape: &mut Tape<S>, chunks: &[&Tensor<f32>]) -> Result<NodeId> {
        let x = tape.input(self.pooled(chunks)?);
        let (w, b) = (tape.param(&self.params, self.weight), tape.param(&self.params, self.bias));
        tape.linear(x, w, Some(b))
    }

    /// Records the mean cross-entropy of a feature-chunk batch on `tape`.
    pub fn loss(&self, tape: &mut Tape<S>, chunks: &[&Tensor<f32>], labels: &[usize]) -> Result<NodeId> {
        let logits = self.logits(tape, chunks)?;
        tape.softmax_cross_entropy(logits, labels)
    }
}

impl<S: Real> ChunkClassifier for AvgPoolClassifier<S> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn predict_chunk(&mut self, chunk: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict_chunks(core::slice::from_ref(chunk))?.remove(0))
    }

    fn predict_chunks(&mut self, chunks: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        if chunks.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<_> = chunks.iter().collect();
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, &refs)?;
        probs_rows(tape.value(logits), self.classes)
    }
}

impl<S: Real> Objective<S> for AvgPoolClassifier<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn accumulate(&mut self, batch: &[&Tensor<f32>], labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.loss(&mut tape, batch, labels)?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }
}

/// Gated recurrent unit
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ c
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<S: Real, R: Rng + ?Sized>(store: &mut ParamStore<S>, rng: &mut R, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let mut uniform = |shape: &[usize]| {
            let len = shape.iter().product();
            Tensor::from_vec(shape, (0..len).map(|_| S::of(rng.random_range(-bound..bound))).collect())
                .expect("positive shape")
        };
        let gates = ["z", "r", "h"];
        let w = gates.map(|g| store.add(alloc::format!("gru.w_{g}"), uniform(&[hidden, input])));
        let u = gates.map(|g| store.add(alloc::format!("gru.u_{g}"), uniform(&[hidden, hidden])));
        let b = gates.map(|g| store.add(alloc::format!("gru.b_{g}"), uniform(&[hidden])));
        Self { w, u, b, input, hidden }
    }

    /// One step on `x [B, input]`, `h [B, hidden]`.
    pub fn step<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: NodeId, h: NodeId) -> Result<NodeId> {
        let w = self.w.map(|p| tape.param(store, p));
        let u = self.u.map(|p| tape.param(store, p));
        let b = self.b.map(|p| tape.param(store, p));
        let gate = |tape: &mut Tape<S>, i: usize, state: NodeId| -> Result<NodeId> {
            let wx = tape.linear(x, w[i], Some(b[i]))?;
            let uh = tape.linear(state, u[i], None)?;
            tape.add(wx, uh)
        };
        let z_in = gate(tape, 0, h)?;
        let z = tape.sigmoid(z_in);
        let r_in = gate(tape, 1, h)?;
        let r = tape.sigmoid(r_in);
        let rh = tape.mul(r, h)?;
        let c_in = gate(tape, 2, rh)?;
        let c = tape.tanh(c_in);
        let delta = tape.sub(c, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }
}

/// Runs `cell` over `sequence[t] : [B, input]` from a zero state and returns
/// the final state.
pub fn gru_forward<S: Real>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    cell: &GruCell,
    sequence: &[NodeId],
) -> Result<NodeId> {
    let first = sequence.first().ok_or(Error::Empty("gru sequence"))?;
    let batch = tape.value(*first).shape()[0];
    let mut h = tape.input(Tensor::zeros(&[batch, cell.hidden])?);
    for &x in sequence {
        h = cell.step(tape, store, x, h)?;
    }
    Ok(h)
}

/// GRU over frame features followed by a linear classifier on the final
/// hidden state.
#[derive(Clone, Debug)]
pub struct GruClassifier<S> {
    params: ParamStore<S>,
    cell: GruCell,
    head_weight: ParamId,
    head_bias: ParamId,
    classes: usize,
}

impl<S: Real> GruClassifier<S> {
    pub fn new(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let cell = GruCell::new(&mut params, &mut rng, dim, hidden);
        let head_weight = params.add("gru.head.weight", kaiming(&mut rng, &[classes, hidden], hidden, 1.0));
        let head_bias = params.add("gru.head.bias", Tensor::zeros(&[classes]).expect("positive shape"));
        Self {
            params,
            cell,
            head_weight,
            head_bias,
            classes,
        }
    }

    pub fn cell(&self) -> &GruCell {
        &self.cell
    }

    fn logits(&self, tape: &mut Tape<S>, chunks: &[&Tensor<f32>]) -> Result<NodeId> {
        let first = chunks.first().ok_or(Error::Empty("chunk batch"))?;
        let t_len = feature_dims(first, self.cell.input, "gru")?;
        let d = self.cell.input;
        for c in chunks {
            first.expect_same_shape(c, "gru")?;
        }
        let mut sequence = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut data = Vec::with_capacity(chunks.len() * d);
            for c in chunks {
                data.extend(c.data()[t * d..(t + 1) * d].iter().map(|&v| S::of(v as f64)));
            }
            sequence.push(tape.input(Tensor::from_vec(&[chunks.len(), d], data)?));
        }
        let h = gru_forward(tape, &self.params, &self.cell, &sequence)?;
        let (w, b) = (tape.param(&self.params, self.head_weight), tape.param(&self.params, self.head_bias));
        tape.linear(h, w, Some(b))
    }

    /// Records the mean cross-entropy of a feature-chunk batch on `tape`.
    pub fn loss(&self, tape: &mut Tape<S>, chunks: &[&Tensor<f32>], labels: &[usize]) -> Result<NodeId> {
        let logits = self.logits(tape, chunks)?;
        tape.softmax_cross_entropy(logits, labels)
    }
}

impl<S: Real> ChunkClassifier for GruClassifier<S> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn predict_chunk(&mut self, chunk: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict_chunks(core::slice::from_ref(chunk))?.remove(0))
    }

    fn predict_chunks(&mut self, chunks: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        if chunks.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<_> = chunks.iter().collect();
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, &refs)?;
        probs_rows(tape.value(logits), self.classes)
    }
}

impl<S: Real> Objective<S> for GruClassifier<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn accumulate(&mut self, batch: &[&Tensor<f32>], labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.loss(&mut tape, batch, labels)?;
        tape.backward(loss, &mut self.params)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }
}
