//! Checkpoint files.
//!
//! ```text
//! magic    "RRNCKPT\0"
//! version  u32 = 1
//! config   u32 length + UTF-8 text (canonical run configuration)
//! count    u32
//! records, each:
//!   name   u32 length + UTF-8 bytes
//!   shape  u32 rank, then rank × u32 extents
//!   data   product(extents) × f32
//! ```
//! All integers and floats are little-endian. Records appear in a fixed
//! order: model parameters, batch-norm statistics (`<layer>.running_mean`,
//! `<layer>.running_var`, `<layer>.num_batches_tracked`), the frozen feature
//! extractor of the baselines (prefixed `extractor.`), and, when the file is
//! meant for resuming, optimizer state (`optim.m.<param>`, `optim.v.<param>`,
//! `optim.step`, `optim.epoch`). Counters are stored as exactly representable
//! f32 integers, which caps them at 2^24.

use std::fs;
use std::path::Path;

use rrn_core::autograd::ParamStore;
use rrn_core::baselines::FeatureExtractor;
use rrn_core::model::RecurrentResidualNet;
use rrn_core::ops::BatchNormStats;
use rrn_core::optim::AdamState;
use rrn_core::train::Trainer;
use rrn_core::{Real, Tensor};

use crate::binio::{Reader, Writer};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::model::Model;

const MAGIC: &[u8; 8] = b"RRNCKPT\0";
const VERSION: u32 = 1;
const COUNTER_LIMIT: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.bytes(self.config.as_bytes())?;
        w.len(self.records.len())?;
        for r in &self.records {
            w.bytes(r.name.as_bytes())?;
            w.shape(&r.shape)?;
            w.f32s(&r.data);
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, MAGIC, "checkpoint")?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = r.string()?;
        let count = r.len()?;
        let mut records = Vec::with_capacity(count.min(1 << 12));
        for _ in 0..count {
            let name = r.string()?;
            let shape = r.shape()?;
            let data = r.f32s(shape.iter().product())?;
            records.push(Record { name, shape, data });
        }
        r.finish()?;
        Ok(Self { config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config).map_err(|e| CliError::Format(format!("checkpoint config: {e}")))
    }

    pub fn has_optimizer(&self) -> bool {
        self.records.iter().any(|r| r.name == "optim.step")
    }
}

fn tensor_record<S: Real>(name: String, t: &Tensor<S>) -> Record {
    Record {
        name,
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

fn vec_record<S: Real>(name: String, v: &[S]) -> Record {
    Record {
        name,
        shape: vec![v.len()],
        data: v.iter().map(|x| x.as_f64() as f32).collect(),
    }
}

fn counter_record(name: String, v: u64) -> Result<Record> {
    if v >= COUNTER_LIMIT {
        return Err(CliError::Format(format!("counter {name} = {v} too large for the checkpoint format")));
    }
    Ok(Record {
        name,
        shape: vec![1],
        data: vec![v as f32],
    })
}

fn params_records<S: Real>(prefix: &str, store: &ParamStore<S>, out: &mut Vec<Record>) {
    for p in store.iter() {
        out.push(tensor_record(format!("{prefix}{}", p.name), &p.value));
    }
}

fn bn_records<S: Real>(prefix: &str, net: &RecurrentResidualNet<S>, out: &mut Vec<Record>) -> Result<()> {
    for (name, stats) in net.batch_norm_stats() {
        out.push(vec_record(format!("{prefix}{name}.running_mean"), &stats.running_mean));
        out.push(vec_record(format!("{prefix}{name}.running_var"), &stats.running_var));
        out.push(counter_record(format!("{prefix}{name}.num_batches_tracked"), stats.tracked)?);
    }
    Ok(())
}

/// Everything needed to rebuild `model`, plus optimizer state if given.
pub fn capture<S: Real>(cfg: &RunConfig, model: &mut Model<S>, trainer: Option<&Trainer<S>>) -> Result<Checkpoint> {
    let mut records = Vec::new();
    params_records("", model.objective().params(), &mut records);
    if let Model::Rrn(net) = model {
        bn_records("", net, &mut records)?;
    }
    if let Some(ext) = model.extractor() {
        params_records("extractor.", ext.network().params(), &mut records);
        bn_records("extractor.", ext.network(), &mut records)?;
        let (mean, std) = ext.standardization();
        records.push(vec_record("extractor.feature_mean".into(), mean));
        records.push(vec_record("extractor.feature_std".into(), std));
    }
    if let Some(t) = trainer {
        let names: Vec<String> = model.objective().params().iter().map(|p| p.name.clone()).collect();
        for (name, m) in names.iter().zip(&t.adam.m) {
            records.push(tensor_record(format!("optim.m.{name}"), m));
        }
        for (name, v) in names.iter().zip(&t.adam.v) {
            records.push(tensor_record(format!("optim.v.{name}"), v));
        }
        records.push(counter_record("optim.step".into(), t.adam.step)?);
        records.push(counter_record("optim.epoch".into(), t.epoch as u64)?);
    }
    Ok(Checkpoint {
        config: cfg.to_text(),
        records,
    })
}

/// Hands out records by name and checks that every record was used.
struct Records<'a> {
    records: &'a [Record],
    used: Vec<bool>,
}

impl<'a> Records<'a> {
    fn new(records: &'a [Record]) -> Self {
        Self {
            records,
            used: vec![false; records.len()],
        }
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<&'a [f32]> {
        let i = self
            .records
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| CliError::Format(format!("checkpoint lacks record `{name}`")))?;
        let r = &self.records[i];
        if r.shape != shape {
            return Err(CliError::Format(format!(
                "record `{name}` has shape {:?}, model expects {shape:?}",
                r.shape
            )));
        }
        self.used[i] = true;
        Ok(&r.data)
    }

    fn tensor<S: Real>(&mut self, name: &str, shape: &[usize]) -> Result<Tensor<S>> {
        let data = self.take(name, shape)?;
        Ok(Tensor::from_vec(shape, data.iter().map(|&v| S::of(v as f64)).collect())?)
    }

    fn counter(&mut self, name: &str) -> Result<u64> {
        let v = self.take(name, &[1])?[0];
        if !(v >= 0.0 && v.fract() == 0.0 && (v as u64) < COUNTER_LIMIT) {
            return Err(CliError::Format(format!("record `{name}` is not a counter: {v}")));
        }
        Ok(v as u64)
    }

    fn finish(&self, allow_optim: bool) -> Result<()> {
        for (r, &used) in self.records.iter().zip(&self.used) {
            if !used && !(allow_optim && r.name.starts_with("optim.")) {
                return Err(CliError::Format(format!("unexpected checkpoint record `{}`", r.name)));
            }
        }
        Ok(())
    }
}

fn restore_params<S: Real>(prefix: &str, store: &mut ParamStore<S>, recs: &mut Records<'_>) -> Result<()> {
    for p in store.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.value = recs.tensor(&format!("{prefix}{}", p.name), &shape)?;
    }
    Ok(())
}

fn restore_bn<S: Real>(prefix: &str, net: &mut RecurrentResidualNet<S>, recs: &mut Records<'_>) -> Result<()> {
    for (name, stats) in net.batch_norm_stats_mut() {
        let c = stats.channels();
        let mean = recs.tensor::<S>(&format!("{prefix}{name}.running_mean"), &[c])?;
        let var = recs.tensor::<S>(&format!("{prefix}{name}.running_var"), &[c])?;
        let tracked = recs.counter(&format!("{prefix}{name}.num_batches_tracked"))?;
        let restored = BatchNormStats {
            running_mean: mean.into_data(),
            running_var: var.into_data(),
            tracked,
            ..stats.clone()
        };
        *stats = restored;
    }
    Ok(())
}

/// Rebuilds the model described by `cfg` from `ckpt`. Every model record
/// must be present with the expected shape; stray records are rejected.
pub fn restore<S: Real>(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Model<S>> {
    let mut recs = Records::new(&ckpt.records);
    let model = match cfg.model {
        crate::config::ModelKind::Rrn => {
            let mut net = RecurrentResidualNet::<S>::new(cfg.network.clone(), cfg.train.seed)?;
            restore_params("", net.params_mut(), &mut recs)?;
            restore_bn("", &mut net, &mut recs)?;
            Model::Rrn(net)
        }
        kind => {
            let ext_cfg = cfg.extractor();
            let mut net = RecurrentResidualNet::<f32>::new(ext_cfg.network.clone(), 0)?;
            restore_params("extractor.", net.params_mut(), &mut recs)?;
            restore_bn("extractor.", &mut net, &mut recs)?;
            let d = ext_cfg.network.stages[ext_cfg.through_stage].channels;
            let mean = recs.tensor::<f32>("extractor.feature_mean", &[d])?.into_data();
            let std = recs.tensor::<f32>("extractor.feature_std", &[d])?.into_data();
            let extractor = FeatureExtractor::from_parts(net, ext_cfg.through_stage, mean, std)?;
            let mut model = Model::with_extractor(cfg, kind, extractor);
            restore_params("", model.objective().params_mut(), &mut recs)?;
            model
        }
    };
    recs.finish(true)?;
    Ok(model)
}

/// Optimizer state saved alongside `model`'s parameters.
pub fn restore_trainer<S: Real>(cfg: &RunConfig, ckpt: &Checkpoint, model: &mut Model<S>) -> Result<Trainer<S>> {
    let mut recs = Records::new(&ckpt.records);
    let params = model.objective().params();
    let mut adam = AdamState::new(cfg.train.adam, params);
    for (p, m) in params.iter().zip(adam.m.iter_mut()) {
        *m = recs.tensor(&format!("optim.m.{}", p.name), p.value.shape())?;
    }
    for (p, v) in params.iter().zip(adam.v.iter_mut()) {
        *v = recs.tensor(&format!("optim.v.{}", p.name), p.value.shape())?;
    }
    adam.step = recs.counter("optim.step")?;
    let epoch = recs.counter("optim.epoch")? as usize;
    let mut trainer = Trainer::new(cfg.train.clone(), params)?;
    trainer.adam = adam;
    trainer.epoch = epoch;
    Ok(trainer)
}
