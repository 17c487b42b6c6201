//! Command-line interface.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rrn_core::autograd::OpKind;
use rrn_core::Real;

use crate::checkpoint::{capture, restore, Checkpoint};
use crate::config::{schema_table, RunConfig};
use crate::dataset::{generate_dir, read_split, Split};
use crate::error::{CliError, Result};
use crate::records::{metric_line, write_predictions};
use crate::run::{ablate_run, ablation_table, eval_run, gradcheck_run, train_run};

#[derive(Debug, Parser)]
#[command(name = "rrn", version, about = "Recurrent residual networks on synthetic videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train and test splits of the synthetic dataset to a directory.
    Generate {
        /// Run configuration of `key = value` lines; see `rrn schema`
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a resumable checkpoint.
    Train {
        /// Run configuration of `key = value` lines; see `rrn schema`
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path to write.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch metrics as JSON lines (default: stdout).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Classify a split and write per-video predictions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Predictions as JSON lines (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
    },
    /// Compare analytic and finite-difference gradients in 64-bit.
    Gradcheck {
        /// Run configuration of `key = value` lines; see `rrn schema`
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scale the backward pass of one primitive to exercise the checker.
        #[arg(long, hide = true, value_parser = parse_op)]
        inject_fault: Option<OpKind>,
    },
    /// Train every cell of the connection × position × context grid.
    Ablate {
        /// Run configuration of `key = value` lines; see `rrn schema`
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Markdown table path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
    },
    /// Print every configuration key with its default and meaning.
    Schema,
}

fn parse_op(s: &str) -> std::result::Result<OpKind, String> {
    const OPS: [(&str, OpKind); 15] = [
        ("conv2d", OpKind::Conv2d),
        ("batchnorm", OpKind::BatchNorm),
        ("relu", OpKind::Relu),
        ("sigmoid", OpKind::Sigmoid),
        ("tanh", OpKind::Tanh),
        ("add", OpKind::Add),
        ("sub", OpKind::Sub),
        ("mul", OpKind::Mul),
        ("affine", OpKind::Affine),
        ("gap", OpKind::GlobalAvgPool),
        ("meanrows", OpKind::MeanRows),
        ("row", OpKind::Row),
        ("linear", OpKind::Linear),
        ("xent", OpKind::SoftmaxCrossEntropy),
        ("sum", OpKind::Sum),
    ];
    OPS.iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(s))
        .map(|&(_, op)| op)
        .ok_or_else(|| {
            let names: Vec<&str> = OPS.iter().map(|(n, _)| *n).collect();
            format!("unknown op `{s}`; one of {}", names.join(", "))
        })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::parse(""),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

/// `path` if given, otherwise `stdout`.
fn sink<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(stdout),
    })
}

fn io_err(path: Option<&Path>) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| match path {
        Some(p) => CliError::io(format!("writing {}", p.display()), e),
        None => CliError::io("writing stdout", e),
    }
}

/// Runs one command, writing its primary output to `stdout` unless an output
/// path was given, and progress notes to `stderr`.
pub fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.train.seed);
            for path in generate_dir(&cfg, &out, seed)? {
                let _ = writeln!(stderr, "wrote {}", path.display());
            }
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            precision,
            resume,
            metrics,
        } => {
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            let mut cfg = match (&config, &resume) {
                (None, Some(ckpt)) => ckpt.run_config()?,
                _ => load_config(config.as_deref())?,
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(ckpt) = &resume {
                check_resumable(&cfg, &ckpt.run_config()?)?;
            }
            let train_videos = read_split(&data, Split::Train)?;
            let test_videos = read_split(&data, Split::Test)?;
            let mut sink = sink(metrics.as_deref(), stdout)?;
            let ckpt = match precision {
                Precision::F32 => train_cmd::<f32>(&cfg, &train_videos, &test_videos, resume.as_ref(), &mut sink, metrics.as_deref())?,
                Precision::F64 => train_cmd::<f64>(&cfg, &train_videos, &test_videos, resume.as_ref(), &mut sink, metrics.as_deref())?,
            };
            sink.flush().map_err(io_err(metrics.as_deref()))?;
            ckpt.save(&out)?;
            let _ = writeln!(stderr, "wrote {}", out.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            precision,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ckpt.run_config()?;
            let videos = read_split(&data, split.into())?;
            let result = match precision {
                Precision::F32 => eval_run(&cfg, &mut restore::<f32>(&cfg, &ckpt)?, &videos)?,
                Precision::F64 => eval_run(&cfg, &mut restore::<f64>(&cfg, &ckpt)?, &videos)?,
            };
            let mut sink = sink(out.as_deref(), stdout)?;
            write_predictions(&mut sink, &result.predictions).map_err(io_err(out.as_deref()))?;
            sink.flush().map_err(io_err(out.as_deref()))?;
            let _ = writeln!(
                stderr,
                "{} split: {} videos, error {:.4}, loss {:.4}",
                Split::from(split).name(),
                result.predictions.len(),
                result.error,
                result.loss
            );
            Ok(())
        }
        Command::Gradcheck {
            config,
            seed,
            inject_fault,
        } => {
            let cfg = load_config(config.as_deref())?;
            let report = gradcheck_run(&cfg, seed.unwrap_or(cfg.train.seed), inject_fault)?;
            for p in &report.params {
                writeln!(
                    stdout,
                    "{:<40} max rel error {:.3e} ({} checked, {} skipped at kinks)",
                    p.name, p.max_rel_error, p.checked, p.skipped_kinks
                )
                .map_err(io_err(None))?;
            }
            writeln!(stdout, "max rel error {:.3e}, threshold {:.1e}", report.max_error(), report.threshold)
                .map_err(io_err(None))?;
            if let Some(p) = report.params.iter().find(|p| p.checked == 0) {
                Err(CliError::Verification(format!(
                    "no coordinate of {} could be checked away from ReLU kinks",
                    p.name
                )))
            } else if report.passed() {
                Ok(())
            } else {
                Err(CliError::Verification(format!(
                    "max relative gradient error {:.3e} exceeds {:.1e}",
                    report.max_error(),
                    report.threshold
                )))
            }
        }
        Command::Ablate {
            config,
            data,
            out,
            threads,
            precision,
        } => {
            if threads == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            let cfg = load_config(config.as_deref())?;
            let train_videos = read_split(&data, Split::Train)?;
            let test_videos = read_split(&data, Split::Test)?;
            let rows = match precision {
                Precision::F32 => ablate_run::<f32>(&cfg, &train_videos, &test_videos, threads)?,
                Precision::F64 => ablate_run::<f64>(&cfg, &train_videos, &test_videos, threads)?,
            };
            let mut sink = sink(out.as_deref(), stdout)?;
            sink.write_all(ablation_table(&rows).as_bytes()).map_err(io_err(out.as_deref()))?;
            sink.flush().map_err(io_err(out.as_deref()))
        }
        Command::Schema => stdout.write_all(schema_table().as_bytes()).map_err(io_err(None)),
    }
}

/// A resumed run may only change the epoch budget.
fn check_resumable(cfg: &RunConfig, saved: &RunConfig) -> Result<()> {
    let mut expected = saved.clone();
    expected.train.epochs = cfg.train.epochs;
    if expected.to_text() == cfg.to_text() {
        return Ok(());
    }
    let theirs = expected.to_text();
    let ours = cfg.to_text();
    let differing: Vec<&str> = ours
        .lines()
        .zip(theirs.lines())
        .filter(|(a, b)| a != b)
        .filter_map(|(a, _)| a.split('=').next().map(str::trim))
        .collect();
    Err(CliError::Config(format!(
        "config differs from the checkpoint in: {}",
        differing.join(", ")
    )))
}

fn train_cmd<S: Real>(
    cfg: &RunConfig,
    train_videos: &[rrn_core::data::SyntheticVideo],
    test_videos: &[rrn_core::data::SyntheticVideo],
    resume: Option<&Checkpoint>,
    sink: &mut dyn Write,
    metrics: Option<&Path>,
) -> Result<Checkpoint> {
    let mut write_err = None;
    let mut outcome = train_run::<S>(cfg, train_videos, Some(test_videos), resume, |r| {
        if write_err.is_none() {
            write_err = writeln!(sink, "{}", metric_line(r)).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(metrics)(e));
    }
    capture(cfg, &mut outcome.model, Some(&outcome.trainer))
}
