//! The pairwise similarity network: configuration, parameters, forward and
//! backward passes, and checkpoint I/O.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;

pub use checkpoint::{load_checkpoint, params_hash, save_checkpoint, Container};
pub use config::{NetConfig, ShapeChain, DIFF_INDEX, KERNEL_SIZE, SAME_INDEX};
pub use model::{
    compare, compare_backward, compare_logits, compare_traced, embed_backward, embed_sequence, embed_steps, embed_traced,
    fcnn_forward, forward_pair, SimilarityScore,
};
pub use params::{Gradients, ModelParams, PARAM_NAMES};
