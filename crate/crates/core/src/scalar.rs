//! Scalar abstraction over the two floating-point widths the engine runs in.
//!
//! Everything numerical is generic over [`Scalar`]: f64 for verification and
//! gradient checking, f32 for training. The width is picked once per run.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type of tensors: f32 or f64.
pub trait Scalar:
    Float + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless for f64, rounds for f32.
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Round-trip through f32, the checkpoint storage width.
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}
