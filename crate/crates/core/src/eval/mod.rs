//! Identification and verification metrics over cross-view probe/gallery
//! settings, computed from cached fused features.

pub mod cache;
pub mod metrics;
pub mod pooling;
pub mod report;

pub use cache::{build_cache, extend_cache, FeatureCache};
pub use metrics::{eer, genuine_rank, rank_k, score_matrix, ScoreMatrix};
pub use pooling::{compare_pooling, evaluate, pooling_csv, PoolingRow, POOLING_FILE};
pub use report::{
    cross_view_report, length_sweep, rank_file, sweep_csv, EvalReport, Grid, SweepRow, TruncateSide, EER_FILE, RANKS,
    SWEEP_FILE,
};
