//! Dual-stream convolutional network with cross multi-head attention for
//! telling AI-generated (text-to-image) pictures from camera photographs.
//!
//! The crate is self-contained: a dense-tensor core with reverse-mode
//! automatic differentiation, the fixed SRM high-pass filter bank, the
//! two-stream model, image decoding and post-processing transforms, Adam
//! training with checkpoints, and confusion-matrix evaluation.
//!
//! All numerics are generic over the scalar width: `f64` for verification
//! and gradient checking, `f32` for training. Pick one per run via the
//! aliases below or a type parameter.

pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod srm;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{bce_loss, finite_diff_check, BatchNormState, FdOptions, LayerNormState, Tensor};

/// Training-mode tensors.
pub type Tensor32 = Tensor<f32>;
/// Verification-mode tensors.
pub type Tensor64 = Tensor<f64>;
/// Training-mode model.
pub type Model32 = net::Model<f32>;
/// Verification-mode model.
pub type Model64 = net::Model<f64>;
