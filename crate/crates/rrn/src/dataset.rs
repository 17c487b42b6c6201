//! Dataset split files.
//!
//! ```text
//! magic    "RRNDATA\0"
//! version  u32 = 1
//! spec     u32 length + UTF-8 text (the dataset keys of the config)
//! count    u32
//! per video:
//!   label  u32
//!   seed   u64
//!   shape  u32 rank, then rank × u32 extents  ([F, C, H, W])
//!   frames F·C·H·W × f32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use rrn_core::data::{generate, SyntheticVideo};
use rrn_core::Tensor;

use crate::binio::{Reader, Writer};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"RRNDATA\0";
const VERSION: u32 = 1;

pub const TRAIN_FILE: &str = "train.rrnd";
pub const TEST_FILE: &str = "test.rrnd";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn file(self) -> &'static str {
        match self {
            Split::Train => TRAIN_FILE,
            Split::Test => TEST_FILE,
        }
    }

    /// Generation seed of the split. The splits sit 2^40 apart so that their
    /// per-video streams `seed ⊕ index` never coincide.
    pub fn seed(self, seed: u64) -> u64 {
        let k = match self {
            Split::Train => 1u64,
            Split::Test => 2,
        };
        seed ^ (k << 40)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataFile {
    pub spec: String,
    pub videos: Vec<SyntheticVideo>,
}

pub fn encode(file: &DataFile) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.bytes(file.spec.as_bytes())?;
    w.len(file.videos.len())?;
    for v in &file.videos {
        w.len(v.label)?;
        w.u64(v.seed);
        w.shape(v.frames.shape())?;
        w.f32s(v.frames.data());
    }
    Ok(w.buf)
}

pub fn decode(bytes: &[u8]) -> Result<DataFile> {
    let (mut r, version) = Reader::open(bytes, MAGIC, "dataset")?;
    if version != VERSION {
        return Err(CliError::Format(format!("unsupported dataset version {version}")));
    }
    let spec = r.string()?;
    let count = r.len()?;
    let mut videos = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label = r.len()?;
        let seed = r.u64()?;
        let shape = r.shape()?;
        if shape.len() != 4 {
            return Err(CliError::Format(format!("video tensor of rank {} (expected 4)", shape.len())));
        }
        let data = r.f32s(shape.iter().product())?;
        videos.push(SyntheticVideo {
            frames: Tensor::from_vec(&shape, data)?,
            label,
            seed,
        });
    }
    r.finish()?;
    Ok(DataFile { spec, videos })
}

pub fn write(path: &Path, file: &DataFile) -> Result<()> {
    fs::write(path, encode(file)?).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read(path: &Path) -> Result<DataFile> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    decode(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Generates both splits into `dir` (created if missing) with a manifest
/// echoing the dataset keys and seed.
pub fn generate_dir(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let manifest = cfg.dataset_text(seed);
    let mut written = Vec::new();
    for (split, spec) in [(Split::Train, cfg.data.clone()), (Split::Test, cfg.test_spec())] {
        let videos = generate(&spec, split.seed(seed))?;
        let path = dir.join(split.file());
        write(
            &path,
            &DataFile {
                spec: format!("{manifest}split = {}\n", split.name()),
                videos,
            },
        )?;
        written.push(path);
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, &manifest).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    written.push(path);
    Ok(written)
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<SyntheticVideo>> {
    let file = read(&dir.join(split.file()))?;
    if file.videos.is_empty() {
        return Err(CliError::Format(format!("{} split in {} is empty", split.name(), dir.display())));
    }
    Ok(file.videos)
}
