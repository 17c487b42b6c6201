//! Video-level classification from per-chunk class distributions.

use alloc::vec::Vec;

use crate::data::{video_chunks, SyntheticVideo};
use crate::error::{Error, Result};
use crate::model::ChunkSpec;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Anything that maps a chunk `[T, C, H, W]` to a class distribution.
pub trait ChunkClassifier {
    fn classes(&self) -> usize;

    fn predict_chunk(&mut self, chunk: &Tensor<f32>) -> Result<Vec<f64>>;

    /// Distributions for several chunks; override to batch the work.
    fn predict_chunks(&mut self, chunks: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        chunks.iter().map(|c| self.predict_chunk(c)).collect()
    }
}

/// A video already cut into chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkedVideo {
    pub chunks: Vec<Tensor<f32>>,
    pub label: usize,
}

impl ChunkedVideo {
    pub fn from_video(video: &SyntheticVideo, spec: &ChunkSpec) -> Result<Self> {
        Ok(Self {
            chunks: video_chunks(video, spec)?,
            label: video.label,
        })
    }
}

pub fn chunk_videos(videos: &[SyntheticVideo], spec: &ChunkSpec) -> Result<Vec<ChunkedVideo>> {
    videos.iter().map(|v| ChunkedVideo::from_video(v, spec)).collect()
}

/// Element-wise mean of the distributions. Each class is summed in
/// ascending value order, so the mean does not depend on chunk order.
pub fn average_probs(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = probs.first().ok_or(Error::Empty("chunk predictions"))?;
    let classes = first.len();
    if let Some(p) = probs.iter().find(|p| p.len() != classes) {
        return Err(Error::DimensionMismatch {
            op: "average_probs",
            axis: "classes",
            expected: classes,
            found: p.len(),
        });
    }
    let n = probs.len() as f64;
    let mut column = Vec::with_capacity(probs.len());
    Ok((0..classes)
        .map(|k| {
            column.clear();
            column.extend(probs.iter().map(|p| p[k]));
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub label: usize,
    pub probs: Vec<f64>,
    pub predicted: usize,
    /// Mean over chunks of `-ln p(label)`.
    pub chunk_loss: f64,
}

pub fn classify_video<C: ChunkClassifier + ?Sized>(clf: &mut C, video: &ChunkedVideo) -> Result<VideoPrediction> {
    if video.label >= clf.classes() {
        return Err(Error::LabelOutOfRange {
            label: video.label,
            classes: clf.classes(),
        });
    }
    let per_chunk = clf.predict_chunks(&video.chunks)?;
    let probs = average_probs(&per_chunk)?;
    let chunk_loss = per_chunk
        .iter()
        .map(|p| -libm::log(p[video.label].max(f64::MIN_POSITIVE)))
        .sum::<f64>()
        / per_chunk.len() as f64;
    Ok(VideoPrediction {
        label: video.label,
        predicted: argmax(&probs),
        probs,
        chunk_loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub predictions: Vec<VideoPrediction>,
    /// Fraction of misclassified videos.
    pub error: f64,
    /// Mean chunk cross-entropy over all videos.
    pub loss: f64,
}

pub fn classify_split<C: ChunkClassifier + ?Sized>(clf: &mut C, videos: &[ChunkedVideo]) -> Result<SplitResult> {
    if videos.is_empty() {
        return Err(Error::Empty("video split"));
    }
    let predictions = videos
        .iter()
        .map(|v| classify_video(clf, v))
        .collect::<Result<Vec<_>>>()?;
    let wrong = predictions.iter().filter(|p| p.predicted != p.label).count();
    let n = predictions.len() as f64;
    let loss = predictions.iter().map(|p| p.chunk_loss).sum::<f64>() / n;
    Ok(SplitResult {
        error: wrong as f64 / n,
        loss,
        predictions,
    })
}

/// Video-level error rate.
pub fn evaluate<C: ChunkClassifier + ?Sized>(clf: &mut C, videos: &[ChunkedVideo]) -> Result<f64> {
    Ok(classify_split(clf, videos)?.error)
}
