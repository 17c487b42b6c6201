//! Minibatch training over chunks with ADAM.
//!
//! Every video contributes `floor(F' / T)` chunks, each labelled with its
//! video's class. An epoch shuffles the chunk pool and walks it in
//! minibatches of `ceil(update_fraction · N)` chunks, taking one ADAM step per
//! minibatch on the mean cross-entropy.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::inference::{classify_split, ChunkClassifier, ChunkedVideo};
use crate::model::RecurrentResidualNet;
use crate::ops::{softmax, NormMode};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A trainable chunk classifier.
pub trait Objective<S: Real>: ChunkClassifier {
    fn params(&self) -> &ParamStore<S>;
    fn params_mut(&mut self) -> &mut ParamStore<S>;

    /// Adds the gradient of the mean cross-entropy over `batch` to the
    /// parameter gradients and returns that mean loss.
    fn accumulate(&mut self, batch: &[&Tensor<f32>], labels: &[usize]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Fraction of the training chunks per ADAM update.
    pub update_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            update_fraction: 0.01,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.update_fraction > 0.0 && self.update_fraction <= 1.0) {
            return Err(Error::Config("update_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Chunks per update for a pool of `n` chunks.
    pub fn batch_size(&self, n: usize) -> usize {
        let b = libm::ceil(self.update_fraction * n as f64) as usize;
        b.clamp(1, n.max(1))
    }
}

/// The flattened chunk pool of a split.
#[derive(Clone, Debug, Default)]
pub struct ChunkSet<'a> {
    pub chunks: Vec<&'a Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl<'a> ChunkSet<'a> {
    pub fn new(videos: &'a [ChunkedVideo]) -> Self {
        let mut set = Self::default();
        for v in videos {
            for c in &v.chunks {
                set.chunks.push(c);
                set.labels.push(v.label);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub error: f64,
}

/// Optimizer state plus the epoch counter, enough to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<S> {
    pub config: TrainConfig,
    pub adam: AdamState<S>,
    pub epoch: usize,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).rotate_left(32)
}

impl<S: Real> Trainer<S> {
    pub fn new(config: TrainConfig, params: &ParamStore<S>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(config.adam, params),
            config,
            epoch: 0,
        })
    }

    /// One pass over the shuffled chunk pool; returns the mean minibatch loss.
    pub fn run_epoch<M: Objective<S> + ?Sized>(&mut self, model: &mut M, set: &ChunkSet<'_>) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Empty("training chunks"));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, self.epoch)));
        let batch = self.config.batch_size(set.len());
        let mut total = 0.0;
        let mut updates = 0usize;
        for idx in order.chunks(batch) {
            let chunks: Vec<&Tensor<f32>> = idx.iter().map(|&i| set.chunks[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
            model.params_mut().zero_grad();
            let loss = model.accumulate(&chunks, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            self.adam.step(model.params_mut())?;
            total += loss;
            updates += 1;
        }
        model.params_mut().zero_grad();
        self.epoch += 1;
        Ok(total / updates as f64)
    }
}

/// Trains for `config.epochs` epochs from the trainer's current epoch and
/// reports video-level loss and error on `train` and, if given, `test` after
/// every epoch. `on_epoch` sees the records as they are produced.
pub fn train<S: Real, M: Objective<S> + ?Sized>(
    model: &mut M,
    trainer: &mut Trainer<S>,
    train_videos: &[ChunkedVideo],
    test_videos: Option<&[ChunkedVideo]>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let set = ChunkSet::new(train_videos);
    let mut records = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let loss = trainer.run_epoch(model, &set)?;
        let epoch = trainer.epoch;
        let train_eval = classify_split(model, train_videos)?;
        let mut push = |r: EpochRecord| {
            on_epoch(&r);
            records.push(r);
        };
        push(EpochRecord {
            epoch,
            split: "train".into(),
            loss,
            error: train_eval.error,
        });
        if let Some(test) = test_videos {
            let r = classify_split(model, test)?;
            push(EpochRecord {
                epoch,
                split: "test".into(),
                loss: r.loss,
                error: r.error,
            });
        }
    }
    Ok(records)
}

fn stack_chunks<S: Real>(chunks: &[&Tensor<f32>]) -> Result<Tensor<S>> {
    let first = chunks.first().ok_or(Error::Empty("chunk batch"))?;
    let mut data = Vec::with_capacity(first.len() * chunks.len());
    for c in chunks {
        first.expect_same_shape(c, "chunk batch")?;
        data.extend(c.data().iter().map(|&v| S::of(v as f64)));
    }
    let mut shape = alloc::vec![chunks.len()];
    shape.extend_from_slice(first.shape());
    Tensor::from_vec(&shape, data)
}

impl<S: Real> ChunkClassifier for RecurrentResidualNet<S> {
    fn classes(&self) -> usize {
        self.config().classes
    }

    fn predict_chunk(&mut self, chunk: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict_chunks(core::slice::from_ref(chunk))?.remove(0))
    }

    /// Runs all chunks as one batch in inference mode, so the outputs do not
    /// depend on how chunks are grouped.
    fn predict_chunks(&mut self, chunks: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        if chunks.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&Tensor<f32>> = chunks.iter().collect();
        let batch = stack_chunks::<S>(&refs)?;
        let saved = self.mode();
        self.set_mode(NormMode::Eval);
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &batch);
        self.set_mode(saved);
        let logits = tape.value(out?.logits).clone();
        let probs = softmax(&logits)?;
        Ok(probs
            .data()
            .chunks(self.config().classes)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

impl<S: Real> Objective<S> for RecurrentResidualNet<S> {
    fn params(&self) -> &ParamStore<S> {
        RecurrentResidualNet::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        RecurrentResidualNet::params_mut(self)
    }

    fn accumulate(&mut self, batch: &[&Tensor<f32>], labels: &[usize]) -> Result<f64> {
        let chunks = stack_chunks::<S>(batch)?;
        let saved = self.mode();
        self.set_mode(NormMode::Train);
        let mut tape = Tape::new();
        let result = self.loss(&mut tape, &chunks, labels);
        self.set_mode(saved);
        let (loss, _) = result?;
        tape.backward(loss, RecurrentResidualNet::params_mut(self))?;
        Ok(tape.value(loss).data()[0].as_f64())
    }
}
