//! Recurrent residual networks for order-sensitive video classification.
//!
//! A residual network is replicated once per frame of a short chunk, and
//! selected residual blocks receive an additive skip connection from the same
//! block in the previous time column. The crate contains everything needed to
//! train and evaluate such networks without any runtime dependencies beyond
//! `alloc`:
//!
//! * [`tensor`] and [`ops`]: dense tensors and forward kernels,
//! * [`autograd`]: a define-by-run tape with shared-parameter accumulation,
//! * [`blocks`] and [`model`]: spatial and temporal residual blocks and the
//!   unrolled network,
//! * [`data`]: deterministic synthetic videos plus frame sampling/chunking,
//! * [`baselines`]: average-pooling and GRU classifiers over frame features,
//! * [`optim`], [`train`] and [`inference`]: ADAM, the training loop and
//!   chunk-averaged video classification.
//!
//! File formats and the command-line front end live in the `rrn` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autograd;
pub mod baselines;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
