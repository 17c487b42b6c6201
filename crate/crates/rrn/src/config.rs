//! Plain-text `key = value` run configuration.
//!
//! Every key has a documented default (see [`SCHEMA`] or `rrn schema`), so a
//! file only lists what it changes. Unknown keys, repeated keys and
//! unparsable values are rejected with the offending key in the message.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rrn_core::baselines::ExtractorConfig;
use rrn_core::blocks::TemporalConnection;
use rrn_core::data::{DatasetSpec, Task};
use rrn_core::model::{BlockPosition, ChunkSpec, NetworkConfig, Readout, Stage};
use rrn_core::optim::AdamConfig;
use rrn_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// `(key, default, meaning)` for every accepted key, in canonical order.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("task", "direction", "direction | reversal"),
    ("directions", "4", "number of motion directions (direction task)"),
    ("videos_per_class", "50", "training videos per class"),
    ("test_videos_per_class", "25", "test videos per class"),
    ("frames", "8", "raw frames per video"),
    ("size", "32", "frame side in pixels"),
    ("noise", "0.05", "std of additive pixel noise"),
    ("speed", "8", "blob displacement per raw frame in pixels"),
    ("blob_sigma", "3", "blob std in pixels (initial width for reversal)"),
    ("growth", "2", "final/initial blob width ratio (reversal task)"),
    ("model", "rrn", "rrn | avgpool | gru"),
    ("stages", "8x1,16x1,32x1,64x1", "comma-separated <channels>x<blocks> stages"),
    ("temporal_positions", "3:0", "comma-separated <stage>:<block> positions, or none"),
    ("connection", "identity", "identity | linear | nonlinear"),
    ("readout", "last", "last | mean (chunk output column)"),
    ("context", "2", "frames per chunk T"),
    ("stride", "1", "frame sampling stride s"),
    ("epochs", "16", "training epochs"),
    ("update_fraction", "0.01", "fraction of training chunks per ADAM update"),
    ("lr", "0.001", "ADAM learning rate"),
    ("beta1", "0.9", "ADAM first-moment decay"),
    ("beta2", "0.999", "ADAM second-moment decay"),
    ("epsilon", "1e-8", "ADAM denominator offset"),
    ("seed", "0", "model initialization and shuffling seed"),
    ("gru_hidden", "32", "GRU hidden units (gru model)"),
    ("feature_stage", "1", "extractor stage whose pooled output feeds the baselines"),
    ("extractor_stages", "8x1,16x1", "stages of the baseline frame extractor"),
    ("pretrain_frames", "400", "single frames used to pretrain the extractor"),
    ("pretrain_epochs", "3", "extractor pretraining epochs"),
    ("gradcheck_threshold", "1e-6", "max relative error for gradcheck"),
    ("gradcheck_coords", "6", "coordinates checked per parameter tensor (0 = all)"),
    ("gradcheck_batch", "2", "chunks per gradcheck batch"),
    ("ablate_connections", "identity,linear,nonlinear", "ablation grid: connection types"),
    ("ablate_positions", "3:0", "ablation grid: position sets separated by ';'"),
    ("ablate_contexts", "2", "ablation grid: chunk contexts T"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rrn,
    AvgPool,
    Gru,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rrn => "rrn",
            ModelKind::AvgPool => "avgpool",
            ModelKind::Gru => "gru",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub connections: Vec<TemporalConnection>,
    pub positions: Vec<Vec<BlockPosition>>,
    pub contexts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DatasetSpec,
    pub test_videos_per_class: usize,
    pub model: ModelKind,
    pub network: NetworkConfig,
    pub chunks: ChunkSpec,
    pub train: TrainConfig,
    pub gru_hidden: usize,
    pub feature_stage: usize,
    pub extractor_stages: Vec<Stage>,
    pub pretrain_frames: usize,
    pub pretrain_epochs: usize,
    pub gradcheck_threshold: f64,
    pub gradcheck_coords: usize,
    pub gradcheck_batch: usize,
    pub grid: AblationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("").expect("schema defaults parse")
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid value {value:?} for key `{key}`: {why}"))
}

struct Values(BTreeMap<&'static str, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("schema key")
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| bad(key, v, e))
    }

    fn positive(&self, key: &str) -> Result<usize> {
        match self.get::<usize>(key)? {
            0 => Err(bad(key, self.raw(key), "must be positive")),
            n => Ok(n),
        }
    }

    fn list<T>(&self, key: &str, sep: char, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
        let v = self.raw(key);
        v.split(sep)
            .map(|item| f(item.trim()).ok_or_else(|| bad(key, v, format!("cannot parse {item:?}"))))
            .collect()
    }
}

fn parse_stage(s: &str) -> Option<Stage> {
    let (c, b) = s.split_once('x')?;
    Some(Stage {
        channels: c.trim().parse().ok()?,
        blocks: b.trim().parse().ok()?,
    })
}

fn parse_position(s: &str) -> Option<BlockPosition> {
    let (st, b) = s.split_once(':')?;
    Some(BlockPosition::new(st.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_positions(s: &str) -> Option<Vec<BlockPosition>> {
    if s.trim() == "none" {
        return Some(Vec::new());
    }
    s.split(',').map(|p| parse_position(p.trim())).collect()
}

pub fn format_positions(positions: &[BlockPosition]) -> String {
    if positions.is_empty() {
        return "none".into();
    }
    positions
        .iter()
        .map(|p| format!("{}:{}", p.stage, p.block))
        .collect::<Vec<_>>()
        .join(",")
}

fn format_stages(stages: &[Stage]) -> String {
    stages
        .iter()
        .map(|s| format!("{}x{}", s.channels, s.blocks))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_f64(v: f64) -> String {
    // `{}` on f64 is the shortest representation that parses back exactly.
    format!("{v}")
}

impl RunConfig {
    /// Parses configuration text on top of the schema defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&'static str, String> =
            SCHEMA.iter().map(|&(k, d, _)| (k, d.to_string())).collect();
        let mut seen = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            let Some(&(canonical, _, _)) = SCHEMA.iter().find(|(k, _, _)| *k == key) else {
                return Err(CliError::Config(format!("unknown config key `{key}` (line {})", lineno + 1)));
            };
            if seen.contains(&canonical) {
                return Err(CliError::Config(format!("config key `{key}` given twice")));
            }
            seen.push(canonical);
            values.insert(canonical, value.trim().to_string());
        }
        Self::from_values(&Values(values))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_values(v: &Values) -> Result<Self> {
        let task = match v.raw("task") {
            "direction" => Task::Direction {
                directions: v.get("directions")?,
            },
            "reversal" => Task::Reversal,
            other => return Err(bad("task", other, "expected direction or reversal")),
        };
        let data = DatasetSpec {
            task,
            videos_per_class: v.positive("videos_per_class")?,
            frames: v.positive("frames")?,
            size: v.positive("size")?,
            noise: v.get("noise")?,
            speed: v.get("speed")?,
            blob_sigma: v.get("blob_sigma")?,
            growth: v.get("growth")?,
        };
        data.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let model = match v.raw("model") {
            "rrn" => ModelKind::Rrn,
            "avgpool" => ModelKind::AvgPool,
            "gru" => ModelKind::Gru,
            other => return Err(bad("model", other, "expected rrn, avgpool or gru")),
        };
        let connection = TemporalConnection::parse(v.raw("connection"))
            .ok_or_else(|| bad("connection", v.raw("connection"), "expected identity, linear or nonlinear"))?;
        let readout = Readout::parse(v.raw("readout"))
            .ok_or_else(|| bad("readout", v.raw("readout"), "expected last or mean"))?;
        let network = NetworkConfig {
            stages: v.list("stages", ',', parse_stage)?,
            temporal_positions: parse_positions(v.raw("temporal_positions"))
                .ok_or_else(|| bad("temporal_positions", v.raw("temporal_positions"), "expected stage:block list"))?,
            connection,
            classes: data.classes(),
            input: [1, data.size, data.size],
            readout,
        };
        network.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let chunks = ChunkSpec::new(v.positive("context")?, v.positive("stride")?)
            .map_err(|e| CliError::Config(e.to_string()))?;
        data.check_chunking(&chunks).map_err(|e| CliError::Config(e.to_string()))?;
        let train = TrainConfig {
            epochs: v.get("epochs")?,
            update_fraction: v.get("update_fraction")?,
            adam: AdamConfig {
                lr: v.get("lr")?,
                beta1: v.get("beta1")?,
                beta2: v.get("beta2")?,
                epsilon: v.get("epsilon")?,
            },
            seed: v.get("seed")?,
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let grid = AblationGrid {
            connections: v.list("ablate_connections", ',', TemporalConnection::parse)?,
            positions: v.list("ablate_positions", ';', parse_positions)?,
            contexts: v.list("ablate_contexts", ',', |s| s.parse().ok().filter(|&t: &usize| t > 0))?,
        };
        let cfg = Self {
            data,
            test_videos_per_class: v.positive("test_videos_per_class")?,
            model,
            network,
            chunks,
            train,
            gru_hidden: v.positive("gru_hidden")?,
            feature_stage: v.get("feature_stage")?,
            extractor_stages: v.list("extractor_stages", ',', parse_stage)?,
            pretrain_frames: v.positive("pretrain_frames")?,
            pretrain_epochs: v.get("pretrain_epochs")?,
            gradcheck_threshold: v.get("gradcheck_threshold")?,
            gradcheck_coords: v.get("gradcheck_coords")?,
            gradcheck_batch: v.positive("gradcheck_batch")?,
            grid,
        };
        if cfg.feature_stage >= cfg.extractor_stages.len() {
            return Err(bad(
                "feature_stage",
                v.raw("feature_stage"),
                format!("extractor has {} stages", cfg.extractor_stages.len()),
            ));
        }
        cfg.extractor().network.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Canonical text: every schema key in order. Parsing it yields an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(key, _, _) in SCHEMA {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    /// Only the keys that describe generated data.
    pub fn dataset_text(&self, seed: u64) -> String {
        let mut out = String::new();
        for key in [
            "task",
            "directions",
            "videos_per_class",
            "test_videos_per_class",
            "frames",
            "size",
            "noise",
            "speed",
            "blob_sigma",
            "growth",
        ] {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        let _ = writeln!(out, "# generated with --seed {seed}");
        out
    }

    fn value_of(&self, key: &str) -> String {
        let d = &self.data;
        match key {
            "task" => match d.task {
                Task::Direction { .. } => "direction".into(),
                Task::Reversal => "reversal".into(),
            },
            "directions" => match d.task {
                Task::Direction { directions } => directions.to_string(),
                Task::Reversal => "4".into(),
            },
            "videos_per_class" => d.videos_per_class.to_string(),
            "test_videos_per_class" => self.test_videos_per_class.to_string(),
            "frames" => d.frames.to_string(),
            "size" => d.size.to_string(),
            "noise" => fmt_f64(d.noise),
            "speed" => fmt_f64(d.speed),
            "blob_sigma" => fmt_f64(d.blob_sigma),
            "growth" => fmt_f64(d.growth),
            "model" => self.model.name().into(),
            "stages" => format_stages(&self.network.stages),
            "temporal_positions" => format_positions(&self.network.temporal_positions),
            "connection" => self.network.connection.name().into(),
            "readout" => self.network.readout.name().into(),
            "context" => self.chunks.context.to_string(),
            "stride" => self.chunks.stride.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "update_fraction" => fmt_f64(self.train.update_fraction),
            "lr" => fmt_f64(self.train.adam.lr),
            "beta1" => fmt_f64(self.train.adam.beta1),
            "beta2" => fmt_f64(self.train.adam.beta2),
            "epsilon" => fmt_f64(self.train.adam.epsilon),
            "seed" => self.train.seed.to_string(),
            "gru_hidden" => self.gru_hidden.to_string(),
            "feature_stage" => self.feature_stage.to_string(),
            "extractor_stages" => format_stages(&self.extractor_stages),
            "pretrain_frames" => self.pretrain_frames.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "gradcheck_threshold" => fmt_f64(self.gradcheck_threshold),
            "gradcheck_coords" => self.gradcheck_coords.to_string(),
            "gradcheck_batch" => self.gradcheck_batch.to_string(),
            "ablate_connections" => self
                .grid
                .connections
                .iter()
                .map(|c| c.name())
                .collect::<Vec<_>>()
                .join(","),
            "ablate_positions" => self
                .grid
                .positions
                .iter()
                .map(|p| format_positions(p))
                .collect::<Vec<_>>()
                .join(";"),
            "ablate_contexts" => self
                .grid
                .contexts
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            other => unreachable!("key {other} missing from value_of"),
        }
    }

    pub fn test_spec(&self) -> DatasetSpec {
        DatasetSpec {
            videos_per_class: self.test_videos_per_class,
            ..self.data.clone()
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        let mut e = ExtractorConfig::small(self.data.size);
        e.network.stages = self.extractor_stages.clone();
        e.through_stage = self.feature_stage;
        e.pretrain_frames = self.pretrain_frames;
        e.pretrain.epochs = self.pretrain_epochs;
        e.pretrain.adam = self.train.adam;
        e.blob_sigma = self.data.blob_sigma;
        e.noise = self.data.noise;
        e
    }
}

/// The schema as an aligned table.
pub fn schema_table() -> String {
    let mut out = String::from("key                      default                      meaning\n");
    for (k, d, m) in SCHEMA {
        let _ = writeln!(out, "{k:<24} {d:<28} {m}");
    }
    out
}
