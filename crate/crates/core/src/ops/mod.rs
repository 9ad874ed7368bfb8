//! Forward operations and their analytic gradients.
//!
//! Every operation is a pure function of its arguments. Backward functions
//! take the forward inputs (or a cache returned by the forward pass) plus the
//! upstream gradient and return gradients for each differentiable input.

mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;

pub use conv::{
    conv2d, conv2d_backward, conv_output_dim, transposed_conv2d, transposed_conv2d_backward, ConvGrads,
};
pub use elementwise::{add, concat_channels, relu, relu_backward, split_channels};
pub use loss::{
    categorical_cross_entropy, categorical_cross_entropy_backward, one_hot, softmax_channels,
    softmax_channels_backward, softmax_cross_entropy_backward, PROB_CLAMP,
};
pub use norm::{
    batchnorm2d, batchnorm2d_backward, BatchNormCache, BatchNormGrads, Mode, RunningStats, BATCHNORM_EPS,
    BATCHNORM_MOMENTUM,
};
pub use pool::{maxpool2x2, maxpool2x2_backward, upsample_nearest2x, upsample_nearest2x_backward, MaxPoolOutput};
