//! Differentiable operators with hand-written backward passes.

mod activation;
mod batch_norm;
mod conv;
mod dense;
mod float;
pub mod gradcheck;
mod pool;
mod shuffle;
mod tensor;

pub use activation::{
    elementwise_add, elementwise_add_backward, leaky_relu, leaky_relu_backward, prelu,
    prelu_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softplus,
};
pub use batch_norm::{
    batch_norm, batch_norm_backward, batch_norm_step, batch_norm_with_mode, BatchNormState,
    BatchStats, BnCache, Mode, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_select, ConvGradRequest, ConvGrads, ConvSpec,
};
pub use dense::{dense, dense_backward};
pub use float::Float;
pub use pool::{max_pool2, max_pool2_backward};
pub use shuffle::{pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle};
pub use tensor::Tensor;
