//! Deterministic numeric kernels for the fixed layer vocabulary
//! (convolution, ReLU, max-pool, dense, softmax cross-entropy), their
//! adjoints, and exact analytic gradients. All kernels are pure functions.

mod conv;
mod dense;
mod loss;
mod pool;
mod relu;

pub use conv::{
    conv2d, conv2d_backward, conv2d_nobias, conv2d_transpose, conv2d_transpose_backward, conv_output_len,
    ConvGrads, ConvParams,
};
pub use dense::{dense_backward, dense_forward, dense_transpose, DenseGrads, DenseParams};
pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use pool::{maxpool_backward, maxpool_forward, maxpool_forward_rect, pool_gather, pool_output_len, unpool, PoolIndices};
pub use relu::{relu_backward, relu_forward, ReluMask};
