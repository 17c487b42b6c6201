//! Training, evaluation, gradient checking and ablation runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rrn_core::autograd::{NodeId, OpKind, ParamStore, Tape};
use rrn_core::blocks::{temporal_parameter_count, TemporalConnection};
use rrn_core::data::{generate, SyntheticVideo};
use rrn_core::gradcheck::{grad_check, Differentiable, GradCheckConfig, GradCheckReport};
use rrn_core::inference::{classify_split, ChunkedVideo, SplitResult};
use rrn_core::model::{BlockPosition, RecurrentResidualNet};
use rrn_core::ops::NormMode;
use rrn_core::train::{train, EpochRecord, Trainer};
use rrn_core::{Real, Tensor};

use crate::checkpoint::{restore, restore_trainer, Checkpoint};
use crate::config::{format_positions, ModelKind, RunConfig};
use crate::error::{CliError, Result};
use crate::model::Model;

/// Rejects videos whose shape or labels do not fit `cfg`.
pub fn check_videos(cfg: &RunConfig, videos: &[SyntheticVideo]) -> Result<()> {
    let [c, h, w] = cfg.network.input;
    for (i, v) in videos.iter().enumerate() {
        let s = v.frames.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(CliError::Format(format!(
                "video {i} has frames of shape {s:?}, config expects [F, {c}, {h}, {w}]"
            )));
        }
        if s[0] < cfg.chunks.min_frames() {
            return Err(CliError::Format(format!(
                "video {i} has {} frames; T={} at stride {} needs {}",
                s[0],
                cfg.chunks.context,
                cfg.chunks.stride,
                cfg.chunks.min_frames()
            )));
        }
        if v.label >= cfg.network.classes {
            return Err(CliError::Format(format!(
                "video {i} has label {} but the config has {} classes",
                v.label, cfg.network.classes
            )));
        }
    }
    Ok(())
}

pub struct TrainOutcome<S: Real> {
    pub model: Model<S>,
    pub trainer: Trainer<S>,
    pub records: Vec<EpochRecord>,
}

/// Trains `cfg.train.epochs` epochs in total, continuing from `resume` if
/// given. Metrics for `test` are reported after every epoch when present.
pub fn train_run<S: Real>(
    cfg: &RunConfig,
    train_videos: &[SyntheticVideo],
    test_videos: Option<&[SyntheticVideo]>,
    resume: Option<&Checkpoint>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    check_videos(cfg, train_videos)?;
    if let Some(t) = test_videos {
        check_videos(cfg, t)?;
    }
    let (mut model, mut trainer) = match resume {
        Some(ckpt) => {
            if !ckpt.has_optimizer() {
                return Err(CliError::Format("checkpoint carries no optimizer state to resume from".into()));
            }
            let mut model = restore::<S>(cfg, ckpt)?;
            let trainer = restore_trainer(cfg, ckpt, &mut model)?;
            (model, trainer)
        }
        None => {
            let mut model = Model::<S>::build(cfg)?;
            let trainer = Trainer::new(cfg.train.clone(), model.objective().params())?;
            (model, trainer)
        }
    };
    let train_chunks = model.prepare(cfg, train_videos)?;
    let test_chunks = test_videos.map(|t| model.prepare(cfg, t)).transpose()?;
    let records = train(
        model.objective(),
        &mut trainer,
        &train_chunks,
        test_chunks.as_deref(),
        on_epoch,
    )?;
    Ok(TrainOutcome {
        model,
        trainer,
        records,
    })
}

pub fn eval_run<S: Real>(cfg: &RunConfig, model: &mut Model<S>, videos: &[SyntheticVideo]) -> Result<SplitResult> {
    check_videos(cfg, videos)?;
    let chunks = model.prepare(cfg, videos)?;
    Ok(classify_split(model.objective(), &chunks)?)
}

struct NetObjective {
    net: RecurrentResidualNet<f64>,
    chunks: Tensor<f64>,
    labels: Vec<usize>,
}

impl Differentiable for NetObjective {
    fn params(&self) -> &ParamStore<f64> {
        self.net.params()
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        self.net.params_mut()
    }
    fn loss(&mut self, tape: &mut Tape<f64>) -> rrn_core::Result<NodeId> {
        Ok(self.net.loss(tape, &self.chunks, &self.labels)?.0)
    }
}

struct HeadObjective {
    model: Model<f64>,
    chunks: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl Differentiable for HeadObjective {
    fn params(&self) -> &ParamStore<f64> {
        match &self.model {
            Model::AvgPool { head, .. } => rrn_core::train::Objective::params(head),
            Model::Gru { head, .. } => rrn_core::train::Objective::params(head),
            Model::Rrn(net) => net.params(),
        }
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        self.model.objective().params_mut()
    }
    fn loss(&mut self, tape: &mut Tape<f64>) -> rrn_core::Result<NodeId> {
        let refs: Vec<&Tensor<f32>> = self.chunks.iter().collect();
        match &self.model {
            Model::AvgPool { head, .. } => head.loss(tape, &refs, &self.labels),
            Model::Gru { head, .. } => head.loss(tape, &refs, &self.labels),
            Model::Rrn(_) => unreachable!("heads only"),
        }
    }
}

fn first_chunks(chunked: &[ChunkedVideo], count: usize) -> (Vec<Tensor<f32>>, Vec<usize>) {
    chunked
        .iter()
        .take(count)
        .map(|v| (v.chunks[0].clone(), v.label))
        .unzip()
}

/// 64-bit finite-difference check of the configured model on a small batch
/// drawn from the configured data distribution.
pub fn gradcheck_run(cfg: &RunConfig, seed: u64, fault: Option<OpKind>) -> Result<GradCheckReport> {
    let spec = rrn_core::data::DatasetSpec {
        videos_per_class: cfg.gradcheck_batch.div_ceil(cfg.network.classes),
        ..cfg.data.clone()
    };
    let videos = generate(&spec, seed)?;
    let gc = GradCheckConfig {
        threshold: cfg.gradcheck_threshold,
        max_coords: (cfg.gradcheck_coords > 0).then_some(cfg.gradcheck_coords),
        seed,
        fault,
        ..Default::default()
    };
    let report = match cfg.model {
        ModelKind::Rrn => {
            let chunked = rrn_core::inference::chunk_videos(&videos, &cfg.chunks)?;
            let (chunks, labels) = first_chunks(&chunked, cfg.gradcheck_batch);
            let refs: Vec<&Tensor<f32>> = chunks.iter().collect();
            let stacked = Tensor::stack(&refs)?.cast::<f64>();
            let mut obj = NetObjective {
                net: RecurrentResidualNet::new(cfg.network.clone(), cfg.train.seed)?,
                chunks: stacked,
                labels,
            };
            obj.net.set_mode(NormMode::Train);
            grad_check(&mut obj, &gc)?
        }
        _ => {
            let mut model = Model::<f64>::build(cfg)?;
            let chunked = model.prepare(cfg, &videos)?;
            let (chunks, labels) = first_chunks(&chunked, cfg.gradcheck_batch);
            let mut obj = HeadObjective { model, chunks, labels };
            grad_check(&mut obj, &gc)?
        }
    };
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub connection: TemporalConnection,
    pub positions: Vec<BlockPosition>,
    pub context: usize,
    pub parameters: usize,
    pub temporal_parameters: usize,
    pub train_error: f64,
    pub test_error: f64,
}

/// The configs of the ablation grid, in row order: connection type, then
/// position set, then context.
pub fn ablation_cells(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    let mut cells = Vec::new();
    for &connection in &cfg.grid.connections {
        for positions in &cfg.grid.positions {
            for &context in &cfg.grid.contexts {
                let mut c = cfg.clone();
                c.model = ModelKind::Rrn;
                c.network.connection = connection;
                c.network.temporal_positions = positions.clone();
                c.chunks.context = context;
                // Re-parse so every cell passes the same validation as a file.
                cells.push(RunConfig::parse(&c.to_text())?);
            }
        }
    }
    Ok(cells)
}

fn ablation_cell<S: Real>(cfg: &RunConfig, train_videos: &[SyntheticVideo], test_videos: &[SyntheticVideo]) -> Result<AblationRow> {
    let mut out = train_run::<S>(cfg, train_videos, None, None, |_| {})?;
    let train_error = eval_run(cfg, &mut out.model, train_videos)?.error;
    let test_error = eval_run(cfg, &mut out.model, test_videos)?.error;
    let Model::Rrn(net) = &out.model else {
        unreachable!("ablation cells are recurrent residual networks")
    };
    Ok(AblationRow {
        connection: cfg.network.connection,
        positions: cfg.network.temporal_positions.clone(),
        context: cfg.chunks.context,
        parameters: net.trainable_count(),
        temporal_parameters: temporal_parameter_count(net.blocks(), net.params()),
        train_error,
        test_error,
    })
}

/// Trains and evaluates every grid cell on up to `threads` worker threads.
/// Cells are independent and seeded, so the table does not depend on the
/// thread count.
pub fn ablate_run<S: Real>(
    cfg: &RunConfig,
    train_videos: &[SyntheticVideo],
    test_videos: &[SyntheticVideo],
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let cells = ablation_cells(cfg)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let row = ablation_cell::<S>(cell, train_videos, test_videos);
                results.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| connection | positions | T | parameters | temporal parameters | train error | test error |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} |\n",
            r.connection.name(),
            format_positions(&r.positions),
            r.context,
            r.parameters,
            r.temporal_parameters,
            r.train_error,
            r.test_error
        ));
    }
    out
}
