//! File formats, configuration and the `rrn` command-line tool built on
//! [`rrn_core`].
//!
//! * [`config`]: the `key = value` run configuration,
//! * [`dataset`] and [`checkpoint`]: binary split and checkpoint files,
//! * [`run`]: training, evaluation, gradient checks and ablation grids,
//! * [`cli`]: the subcommands wired together.

pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod model;
pub mod records;
pub mod run;

pub use error::{CliError, Result};
