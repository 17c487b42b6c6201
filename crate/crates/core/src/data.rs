//! Synthetic order-sensitive videos, frame sampling and chunking.
//!
//! Frames are grayscale images of one Gaussian blob on a torus: positions
//! and distances wrap around the canvas, so a blob looks the same wherever
//! it is and a single frame carries no information about where the blob is
//! heading.
//!
//! * Direction task: the blob translates with constant velocity in one of
//!   `K` evenly spaced directions; the label is the direction.
//! * Reversal task: videos come in pairs. Class 0 shows a blob drifting in a
//!   random direction while it widens; class 1 is the same frame sequence
//!   played backwards. Paired videos hold identical frame multisets.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::ChunkSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Direction { directions: usize },
    Reversal,
}

impl Task {
    pub fn classes(&self) -> usize {
        match *self {
            Task::Direction { directions } => directions,
            Task::Reversal => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub task: Task,
    pub videos_per_class: usize,
    /// Raw frames per video.
    pub frames: usize,
    /// Square canvas side in pixels.
    pub size: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    /// Blob displacement per raw frame, in pixels.
    pub speed: f64,
    /// Blob standard deviation in pixels (the starting width in the
    /// reversal task).
    pub blob_sigma: f64,
    /// Final-to-initial blob width ratio in the reversal task.
    pub growth: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            task: Task::Direction { directions: 4 },
            videos_per_class: 50,
            frames: 8,
            size: 32,
            noise: 0.05,
            speed: 3.0,
            blob_sigma: 2.0,
            growth: 2.0,
        }
    }
}

impl DatasetSpec {
    pub fn classes(&self) -> usize {
        self.task.classes()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if let Task::Direction { directions } = self.task {
            if directions < 2 {
                return bad("directions must be at least 2");
            }
        }
        if self.videos_per_class == 0 {
            return bad("videos_per_class must be positive");
        }
        if self.frames == 0 || self.size == 0 {
            return bad("frames and size must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a non-negative number");
        }
        if !(self.speed.is_finite() && self.blob_sigma > 0.0 && self.growth > 0.0) {
            return bad("speed, blob_sigma and growth must be positive numbers");
        }
        Ok(())
    }

    /// Errors unless every video yields at least one chunk under `chunks`.
    pub fn check_chunking(&self, chunks: &ChunkSpec) -> Result<()> {
        if self.frames < chunks.min_frames() {
            return Err(Error::Config(alloc::format!(
                "{} frames per video cannot fill a chunk of T={} at stride {} (need {})",
                self.frames,
                chunks.context,
                chunks.stride,
                chunks.min_frames()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    /// `[F, 1, H, W]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub label: usize,
    pub seed: u64,
}

impl SyntheticVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }
}

fn wrap_mod(v: f64, m: f64) -> f64 {
    let r = v - m * libm::floor(v / m);
    if r >= m {
        0.0
    } else {
        r
    }
}

/// Torus-wrapped Gaussian blob.
pub fn render_blob(size: usize, cx: f64, cy: f64, sigma: f64) -> Vec<f32> {
    let s = size as f64;
    let wrap = |d: f64| {
        let d = wrap_mod(d, s);
        d.min(s - d)
    };
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let dy = wrap(y as f64 - cy);
        for x in 0..size {
            let dx = wrap(x as f64 - cx);
            out.push(libm::exp(-(dx * dx + dy * dy) * inv) as f32);
        }
    }
    out
}

fn add_noise<R: Rng>(rng: &mut R, pixels: &mut [f32], noise: f64) {
    if noise == 0.0 {
        return;
    }
    for p in pixels {
        let n = rng.sample::<f64, _>(StandardNormal) * noise;
        *p = (*p as f64 + n).clamp(0.0, 1.0) as f32;
    }
}

/// RNG for video `index` of a split generated from `seed`.
pub fn video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

fn trajectory<R: Rng>(rng: &mut R, spec: &DatasetSpec, angle: f64, sigma: impl Fn(usize) -> f64) -> Vec<f32> {
    let s = spec.size as f64;
    let (x0, y0) = (rng.random::<f64>() * s, rng.random::<f64>() * s);
    let (vx, vy) = (spec.speed * libm::cos(angle), spec.speed * libm::sin(angle));
    let mut pixels = Vec::with_capacity(spec.frames * spec.size * spec.size);
    for f in 0..spec.frames {
        let mut frame = render_blob(
            spec.size,
            wrap_mod(x0 + vx * f as f64, s),
            wrap_mod(y0 + vy * f as f64, s),
            sigma(f),
        );
        add_noise(rng, &mut frame, spec.noise);
        pixels.extend_from_slice(&frame);
    }
    pixels
}

fn reversed(frames: &[f32], frame_len: usize) -> Vec<f32> {
    frames.chunks_exact(frame_len).rev().flatten().copied().collect()
}

/// Generates one split. Video `i` uses the RNG stream `seed ⊕ i`; labels
/// cycle through the classes so every class has `videos_per_class` videos.
/// In the reversal task video `2j + 1` is video `2j` reversed.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let classes = spec.classes();
    let total = classes * spec.videos_per_class;
    let shape = [spec.frames, 1, spec.size, spec.size];
    let frame_len = spec.size * spec.size;
    let mut videos = Vec::with_capacity(total);
    match spec.task {
        Task::Direction { directions } => {
            for i in 0..total {
                let label = i % directions;
                let angle = 2.0 * PI * label as f64 / directions as f64;
                let mut rng = video_rng(seed, i);
                let pixels = trajectory(&mut rng, spec, angle, |_| spec.blob_sigma);
                videos.push(SyntheticVideo {
                    frames: Tensor::from_vec(&shape, pixels)?,
                    label,
                    seed: seed ^ i as u64,
                });
            }
        }
        Task::Reversal => {
            let last = spec.frames.saturating_sub(1).max(1) as f64;
            for pair in 0..total / 2 {
                let i = 2 * pair;
                let mut rng = video_rng(seed, i);
                let angle = rng.random::<f64>() * 2.0 * PI;
                let sigma = |f: usize| spec.blob_sigma * (1.0 + (spec.growth - 1.0) * f as f64 / last);
                let forward = trajectory(&mut rng, spec, angle, sigma);
                let backward = reversed(&forward, frame_len);
                videos.push(SyntheticVideo {
                    frames: Tensor::from_vec(&shape, forward)?,
                    label: 0,
                    seed: seed ^ i as u64,
                });
                videos.push(SyntheticVideo {
                    frames: Tensor::from_vec(&shape, backward)?,
                    label: 1,
                    seed: seed ^ (i + 1) as u64,
                });
            }
        }
    }
    Ok(videos)
}

/// Frames at indices `0, s, 2s, …` of `frames[F, C, H, W]`.
pub fn sample_frames(frames: &Tensor<f32>, stride: usize) -> Result<Tensor<f32>> {
    if stride == 0 {
        return Err(Error::Config("frame stride must be positive".into()));
    }
    frames.expect_rank(4, "sample_frames")?;
    let shape = frames.shape();
    let frame_len: usize = shape[1..].iter().product();
    let mut data = Vec::new();
    let mut count = 0;
    for f in (0..shape[0]).step_by(stride) {
        data.extend_from_slice(&frames.data()[f * frame_len..(f + 1) * frame_len]);
        count += 1;
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = count;
    Tensor::from_vec(&out_shape, data)
}

/// Splits `frames[F', C, H, W]` into `floor(F' / T)` consecutive
/// non-overlapping chunks `[T, C, H, W]`; trailing frames are dropped.
pub fn chunk(frames: &Tensor<f32>, context: usize) -> Result<Vec<Tensor<f32>>> {
    frames.expect_rank(4, "chunk")?;
    if context == 0 {
        return Err(Error::Config("chunk context T must be positive".into()));
    }
    let shape = frames.shape();
    let available = shape[0];
    if available < context {
        return Err(Error::DimensionMismatch {
            op: "chunk",
            axis: "frames",
            expected: context,
            found: available,
        });
    }
    let frame_len: usize = shape[1..].iter().product();
    let mut chunk_shape = shape.to_vec();
    chunk_shape[0] = context;
    (0..available / context)
        .map(|m| {
            let start = m * context * frame_len;
            Tensor::from_vec(&chunk_shape, frames.data()[start..start + context * frame_len].to_vec())
        })
        .collect()
}

/// Sampling followed by chunking, as used for training and inference.
pub fn video_chunks(video: &SyntheticVideo, spec: &ChunkSpec) -> Result<Vec<Tensor<f32>>> {
    chunk(&sample_frames(&video.frames, spec.stride)?, spec.context)
}
