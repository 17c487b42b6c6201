use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point element type of a [`Tensor`](crate::Tensor).
///
/// `f32` is used for training, `f64` for gradient checks and oracles.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Short name used in reports and on the command line.
    const NAME: &'static str;

    /// Type that matrix products accumulate in. `f32` products are summed in
    /// `f64` so that long dot products stay within a few ulps of exact.
    type Acc: Real;

    fn widen(self) -> Self::Acc;
    fn narrow(acc: Self::Acc) -> Self;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    type Acc = f64;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn narrow(acc: f64) -> Self {
        acc as f32
    }

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    type Acc = f64;

    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn narrow(acc: f64) -> Self {
        acc
    }

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
