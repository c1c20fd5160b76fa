//! Cross-view gait recognition from silhouette sequences.
//!
//! A per-frame convolutional extractor maps every step of a sequence to a
//! feature map, the maps are pooled over time into one fused feature, and a
//! comparator scores the absolute difference of two fused features.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod rng;
pub mod seqpool;
pub mod tensor;
pub mod train;

pub use error::{GaitError, Result};
pub use seqpool::PoolingMode;
pub use tensor::Tensor;
