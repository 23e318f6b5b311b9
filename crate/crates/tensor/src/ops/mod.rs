mod conv;
mod elementwise;
mod loss;
mod norm;
mod resize;
mod shape;

pub use conv::{conv2d, conv_output_size, Conv2dGeometry};
pub use elementwise::{add, mul_channel, relu, sigmoid};
pub use loss::{bce_with_logits, dot_const, mean, sum, Reduction};
pub use norm::{batch_norm, BatchNormConfig};
pub use resize::{bilinear_taps, resize_bilinear, resize_bilinear_tensor, BilinearTap};
pub use shape::{concat_channels, global_avg_pool, slice_channels};
