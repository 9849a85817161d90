//! Tensor arithmetic, reverse-mode differentiation and the model's kernels.

mod gradcheck;
mod kernels;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{check_gradients, finite_difference_gradient, GradCheckReport};
pub use kernels::{
    batch_norm, bce_with_logits_sum, bilinear_resize, conv2d, conv_extent, cross_entropy_sum, gelu, huber, huber_sum,
    layer_norm, roi_align, softmax_rows, BatchStats,
};
pub use rng::{Rng, RngState};
pub use scalar::{lit, Scalar};
pub use tensor::{grad_enabled, no_grad, Tensor};
