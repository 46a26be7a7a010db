//! CPU implementation of the detection and regression networks.
//!
//! Tensors are dense f32 in `[N, C, T, H, W]` order. Convolutions lower to
//! im2col + GEMM; every layer caches what its backward pass needs during a
//! training-mode forward pass.
//!
//! - [`model`]: network specs and builders.
//! - [`loss`]: cross-entropy and squared-error losses with gradients.
//! - [`train`]: optimizers, learning-rate schedule, training loop.
//! - [`checkpoint`]: self-contained weight files.
//! - [`infer`]: tensor conversions and timed end-to-end inference.

pub mod checkpoint;
pub mod conv;
mod error;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{NetError, Result};
pub use layers::Mode;
pub use model::{DetectionNetSpec, NetSpec, Network, RegressionInput, RegressionNetSpec, Task};
pub use tensor::Tensor;
