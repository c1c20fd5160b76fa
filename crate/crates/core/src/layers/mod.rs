//! Differentiable layer kernels with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod fc;
pub mod lrn;
pub mod maxpool;
pub mod sgd;
pub mod softmax;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_backward_accumulate, conv2d_forward, ConvLayer};
pub use fc::{fc_backward, fc_backward_accumulate, fc_forward, FcLayer};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use maxpool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndices};
pub use sgd::sgd_update;
pub use softmax::{log_softmax, softmax};
