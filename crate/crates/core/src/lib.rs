//! Neural rendering model (NRM) on top of a small convolutional network, and
//! the out-of-distribution metrics its likelihood decomposition yields: the
//! data log-likelihood bound, per-layer reconstruction losses, and the joint
//! log-likelihood of the latent rendering path.

pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod network;
pub mod render;
pub mod tensor;
pub mod train;

pub mod cli;

pub use error::{Error, Result};
pub use network::{Checkpoint, ForwardTrace, LatentState, Network, NetworkSpec};
pub use tensor::Tensor;
