//! Dense tensor math for the fixed layer set the retouching model uses.
//!
//! Every layer has a forward pass and a hand-written backward pass. All
//! routines are generic over [`Scalar`] so the same code runs in `f32` for
//! training and inference and in `f64` when checking gradients.

mod activation;
mod adam;
mod conv;
mod fc;
mod gradcheck;
mod params;
mod pool;
mod resize;
mod scalar;
mod tensor;

pub use activation::{relu, relu_backward, tanh, tanh_backward};
pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use conv::{conv_output_size, ConvLayer};
pub use fc::FcLayer;
pub use gradcheck::{default_step, finite_diff_check, relative_error, GradCheck};
pub(crate) use params::prefixed;
pub use params::ParamSet;
pub use pool::{stats_pool, stats_pool_backward, stats_pool_with, PoolingSet};
pub use resize::{long_edge_size, BilinearResize};
pub use scalar::{gemm, MatRef, Scalar};
pub use tensor::Tensor;
