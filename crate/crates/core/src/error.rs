use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("invalid tensor shape {0:?}: extents must be positive")]
    InvalidShape(Vec<usize>),
    #[error("{op}: empty output extent on {axis}")]
    EmptyOutput { op: &'static str, axis: &'static str },
    #[error("{op}: extent {extent} on {axis} must be even")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        extent: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch norm running statistics are uninitialized")]
    UninitializedRunningStats,
    #[error("loss node must be a scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}
