//! Differentiable primitives: convolution, normalization, dense head,
//! losses, and the optimizer step. Each forward function has a matching
//! `*_backward` vector-Jacobian product; the tape module wires them
//! together.

mod conv;
mod dense;
mod elementwise;
mod loss;
mod norm;
mod sgd;

pub use conv::{conv2d, conv2d_backward, effective_kernel, ConvGrads, ConvSpec};
pub use dense::{dense, dense_backward, DenseGrads};
pub use elementwise::{
    add, concat_channels, concat_channels_backward, mean3, median3, median3_backward,
    median3_select, relu, relu_backward, sigmoid, sigmoid_backward,
};
pub use loss::{cross_entropy_loss, kl_divergence_loss};
pub use norm::{l2_normalize, l2_normalize_backward, lrn, lrn_backward, LrnParams};
pub use sgd::{sgd_step, SgdMomentum};
