//! Forward and backward kernels for the operations the fusion network is built from.

mod activation;
mod conv;
mod elementwise;
mod pool;
mod resample;

pub use activation::{activation, activation_grad, sigmoid, tanh, Activation};
pub use conv::{conv2d, conv2d_grad, conv2d_out_dims, ConvGrads};
pub use elementwise::{
    broadcast_kind, concat_channels, concat_channels_grad, eltwise, eltwise_grad, Broadcast,
    EltwiseOp,
};
pub use pool::{
    adaptive_avgpool, adaptive_avgpool_grad, adaptive_bin, argmax_grad, avgpool, avgpool_grad,
    channel_max, channel_mean, channel_mean_grad, global_maxpool, maxpool2, maxpool2_grad, ArgMax,
};
pub use resample::{bilinear_taps, upsample_bilinear, upsample_bilinear_grad};
