//! Forward numerical kernels, plus the backward rules the tape uses.
//!
//! Every kernel is single-threaded and deterministic: identical inputs give
//! bitwise-identical outputs within one build.

mod activation;
mod conv;
pub(crate) mod gemm;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{relu, sigmoid, tanh};
pub use conv::{conv2d, ConvSpec};
pub use linear::linear;
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batchnorm2d, znorm, BatchNormState, BatchNormStats, NormMode, ZNORM_EPS};
pub use pool::{global_avg_pool, mean_rows};

pub(crate) use conv::{conv2d_backward, conv2d_forward};
pub(crate) use linear::linear_backward;
pub(crate) use norm::{batch_norm_backward, batch_norm_forward, column_moments, BatchNormCache};
pub(crate) use loss::softmax_cross_entropy_backward;
pub(crate) use pool::{global_avg_pool_backward, mean_rows_backward};
