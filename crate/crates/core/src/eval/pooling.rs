use std::fmt::Write as _;

use super::cache::build_cache;
use super::report::{cross_view_report, EvalReport};
use crate::data::Dataset;
use crate::error::Result;
use crate::net::{ModelParams, NetConfig};
use crate::seqpool::PoolingMode;
use crate::train::{train_loop, PreparedSet, TrainConfig, TrainOutcome, TrainState};

pub const POOLING_FILE: &str = "pooling_comparison.csv";

/// Outcome of training and evaluating one pooling mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingRow {
    pub mode: PoolingMode,
    pub best_iteration: usize,
    pub val_precision: f64,
    pub mean_rank1: f64,
    pub same_view_rank1: f64,
    pub mean_eer: f64,
}

impl PoolingRow {
    pub fn new(mode: PoolingMode, outcome: &TrainOutcome, report: &EvalReport) -> Self {
        let (best_iteration, val_precision) = outcome.log.best().unwrap_or((0, f64::NAN));
        let rank1 = report.rank(1).expect("rank 1 is always computed");
        PoolingRow {
            mode,
            best_iteration,
            val_precision,
            mean_rank1: rank1.mean(),
            same_view_rank1: rank1.same_view_mean().unwrap_or(f64::NAN),
            mean_eer: report.mean_eer(),
        }
    }
}

pub fn pooling_csv(rows: &[PoolingRow]) -> String {
    let mut s = String::from("mode,best_iteration,val_precision,mean_rank1,same_view_rank1,mean_eer\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.2},{:.2},{:.2}",
            r.mode, r.best_iteration, r.val_precision, r.mean_rank1, r.same_view_rank1, r.mean_eer
        );
    }
    s
}

/// Cache of `test` under `params`, then the cross-view report.
pub fn evaluate(test: &Dataset, params: &ModelParams<f32>) -> Result<EvalReport> {
    cross_view_report(&build_cache(test, params)?, params)
}

/// Trains one model per mode with otherwise identical settings and
/// evaluates each best model on `test`.
pub fn compare_pooling(
    train: &PreparedSet,
    val: &PreparedSet,
    test: &Dataset,
    net: NetConfig,
    config: &TrainConfig,
    modes: &[PoolingMode],
) -> Result<Vec<PoolingRow>> {
    modes
        .iter()
        .map(|&mode| {
            let config = TrainConfig {
                pooling: mode,
                ..config.clone()
            };
            let outcome = train_loop(train, val, &config, TrainState::fresh(net, &config)?, None, |_| {})?;
            let report = evaluate(test, &outcome.best)?;
            Ok(PoolingRow::new(mode, &outcome, &report))
        })
        .collect()
}
