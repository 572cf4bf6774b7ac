//! Tensor kernels: convolution, activations, pooling, dense layers and
//! losses. Gradients are composed by hand per layer.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use dense::{dense_backward, dense_forward};
pub use loss::{soft_cross_entropy, softmax, softmax_cross_entropy};
pub use pool::{avgpool_global, avgpool_global_backward, maxpool2x2, maxpool2x2_backward};
