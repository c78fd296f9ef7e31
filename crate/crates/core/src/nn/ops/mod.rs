mod conv;
mod elementwise;
mod fft;
mod norm;
mod resize;

pub use conv::{conv3d, conv_transpose2, maxpool2, pointwise};
pub use elementwise::{
    add, batch_concat, batch_slice, concat_channels, gelu, gelu_grad_scalar, gelu_scalar,
    global_avg_pool, mul, mul_channel_gate, scale_samples, sigmoid, sigmoid_scalar,
};
pub use fft::{fft3, ifft3_real, imag_residue};
pub use norm::{instance_norm, layer_norm_channels, NORM_EPS};
pub use resize::upsample2_trilinear;
