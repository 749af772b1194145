//! Stateless forward kernels. The differentiable versions live on
//! [`Tape`](crate::tape::Tape).

pub mod conv;
pub(crate) mod gemm;
pub mod linear;
pub mod pointwise;
pub mod pool;

pub use conv::{conv2d, Conv2dConfig};
pub use linear::linear;
pub use pointwise::{add, concat_channels, mul, mul_channels, sigmoid, silu, sin_affine};
pub use pool::{global_avg_pool, maxpool, upsample_nearest_2x, MaxPoolConfig};
