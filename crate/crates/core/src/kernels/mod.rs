//! Forward and backward kernels for the layer types the network uses.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

#[cfg(test)]
pub(crate) mod testutil;

pub use activation::{dropout, dropout_backward, relu, relu_backward, DropoutMask};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{global_maxpool_forward, maxpool2x2_forward, maxpool_backward, PoolIndices};
