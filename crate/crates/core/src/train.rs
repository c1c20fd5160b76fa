//! Pairwise training with the negative log-likelihood of the same/different
//! label, plain SGD and periodic balanced validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairLabel, PairSampler, TrainingPair};
use crate::error::{GaitError, Result};
use crate::net::checkpoint::{load_checkpoint_with_meta, save_checkpoint_with_meta};
use crate::net::model::{compare_backward, compare_traced, embed_backward, embed_steps, embed_traced, sequence_steps};
use crate::net::{Gradients, ModelParams, NetConfig, SimilarityScore};
use crate::rng::{substream, Stream};
use crate::seqpool::{FusedFeature, PoolingMode};
use crate::tensor::Tensor;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOSS_LOG: &str = "loss.csv";
pub const VALIDATION_LOG: &str = "validation.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validate_every: usize,
    pub pooling: PoolingMode,
    pub seed: u64,
    /// Number of fixed validation pairs, half positive.
    pub val_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.0,
            batch_size: 16,
            max_iterations: 2000,
            validate_every: 100,
            pooling: PoolingMode::Max,
            seed: 0,
            val_pairs: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(GaitError::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.momentum.is_finite() && self.momentum >= 0.0) {
            return Err(GaitError::invalid(format!("momentum must be >= 0, got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(GaitError::invalid(format!("batch size must be even and positive, got {}", self.batch_size)));
        }
        if self.validate_every == 0 {
            return Err(GaitError::invalid("validate_every must be at least 1"));
        }
        if self.val_pairs == 0 || self.val_pairs % 2 != 0 {
            return Err(GaitError::invalid(format!("val_pairs must be even and positive, got {}", self.val_pairs)));
        }
        Ok(())
    }
}

fn log_softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

/// `-(t0 ln p0 + t1 ln p1)` evaluated as a log-softmax of the logits.
pub fn pair_loss(score: &SimilarityScore, label: PairLabel) -> f64 {
    let t = label.target();
    let lp = log_softmax2(score.logits);
    -(t[0] * lp[0] + t[1] * lp[1])
}

/// Gradient of [`pair_loss`] with respect to the logits: `p - t`.
pub fn pair_loss_grad(score: &SimilarityScore, label: PairLabel) -> [f64; 2] {
    let t = label.target();
    let lp = log_softmax2(score.logits);
    [lp[0].exp() - t[0], lp[1].exp() - t[1]]
}

/// Step inputs of every sequence of a dataset at the network resolution.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub dataset: Dataset,
    pub steps: Vec<Vec<Tensor<f32>>>,
}

impl PreparedSet {
    pub fn new(dataset: &Dataset, input_size: usize) -> Self {
        let dataset = dataset.resized(input_size);
        let steps = dataset.sequences().par_iter().map(sequence_steps::<f32>).collect();
        PreparedSet { dataset, steps }
    }

    fn describe(&self, pair: &TrainingPair) -> String {
        format!(
            "{} vs {}",
            self.dataset.sequence(pair.probe).key,
            self.dataset.sequence(pair.gallery).key
        )
    }
}

/// One SGD step on the mean loss of `batch`. Each distinct sequence is
/// embedded once; gradients are reduced in a fixed order. Returns the mean
/// loss before the update.
pub fn train_step(
    batch: &[TrainingPair],
    data: &PreparedSet,
    params: &mut ModelParams<f32>,
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(GaitError::invalid("empty training batch"));
    }
    let mode = params.pooling;
    let mut unique: BTreeMap<usize, usize> = BTreeMap::new();
    for p in batch {
        for idx in [p.probe, p.gallery] {
            let next = unique.len();
            unique.entry(idx).or_insert(next);
        }
    }
    let order: Vec<usize> = {
        let mut v = vec![0; unique.len()];
        for (&seq, &slot) in &unique {
            v[slot] = seq;
        }
        v
    };
    let frozen = &*params;
    let traces = order
        .par_iter()
        .map(|&i| embed_traced(&data.steps[i], frozen, mode))
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zero_grads();
    let mut fused_grads: Vec<Option<Tensor<f32>>> = vec![None; order.len()];
    let mut total = 0.0;
    for pair in batch {
        let (ia, ib) = (unique[&pair.probe], unique[&pair.gallery]);
        let (a, b) = (&traces[ia].fused.maps, &traces[ib].fused.maps);
        let trace = compare_traced(a, b, params)?;
        let score = SimilarityScore::from_logits(trace.logits.data());
        let loss = pair_loss(&score, pair.label);
        if !loss.is_finite() {
            return Err(GaitError::NonFinite(format!("loss of pair {}; step aborted", data.describe(pair))));
        }
        total += loss;
        let g = pair_loss_grad(&score, pair.label);
        let g_logits = Tensor::new(&[2], vec![(g[0] * scale) as f32, (g[1] * scale) as f32])?;
        let (ga, gb) = compare_backward(&trace, a, b, &g_logits, params, &mut grads)?;
        for (slot, g) in [(ia, ga), (ib, gb)] {
            match &mut fused_grads[slot] {
                Some(acc) => acc.add_assign(&g)?,
                none => *none = Some(g),
            }
        }
    }

    let per_sequence = traces
        .par_iter()
        .zip(&fused_grads)
        .map(|(trace, g)| {
            let mut local = frozen.zero_grads();
            if let Some(g) = g {
                embed_backward(trace, g, frozen, &mut local)?;
            }
            Ok(local)
        })
        .collect::<Result<Vec<Gradients<f32>>>>()?;
    for g in &per_sequence {
        grads.add_assign(g)?;
    }
    params.sgd_step(&grads, lr, momentum)?;
    Ok(total * scale)
}

/// Fixed validation pairs drawn from the validation substream.
pub fn validation_pairs(dataset: &Dataset, count: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    PairSampler::new(dataset)?.sample(count, &mut substream(seed, Stream::Validation, 0))
}

/// Mean of the per-class accuracies of `(predicted_same, label)` outcomes.
pub fn balanced_accuracy(outcomes: &[(bool, PairLabel)]) -> f64 {
    let rate = |label: PairLabel| {
        let of: Vec<bool> = outcomes.iter().filter(|o| o.1 == label).map(|o| o.0).collect();
        if of.is_empty() {
            return None;
        }
        let want = label == PairLabel::Same;
        Some(of.iter().filter(|&&p| p == want).count() as f64 / of.len() as f64)
    };
    let rates: Vec<f64> = [PairLabel::Same, PairLabel::Different].into_iter().filter_map(rate).collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// Balanced pair accuracy of `params` on `pairs`.
pub fn validate(params: &ModelParams<f32>, data: &PreparedSet, pairs: &[TrainingPair]) -> Result<f64> {
    let mut needed: Vec<usize> = pairs.iter().flat_map(|p| [p.probe, p.gallery]).collect();
    needed.sort_unstable();
    needed.dedup();
    let features = needed
        .par_iter()
        .map(|&i| embed_steps(&data.steps[i], params, params.pooling).map(|f| (i, f)))
        .collect::<Result<BTreeMap<usize, FusedFeature<f32>>>>()?;
    let outcomes = pairs
        .iter()
        .map(|p| {
            crate::net::compare(&features[&p.probe], &features[&p.gallery], params).map(|s| (s.predicts_same(), p.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(balanced_accuracy(&outcomes))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// `(iteration, mean batch loss)`, iterations counted from 1.
    pub losses: Vec<(usize, f64)>,
    /// `(iteration, balanced precision)`; iteration 0 is the initial model.
    pub validations: Vec<(usize, f64)>,
    /// Validations that produced a new best checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn best(&self) -> Option<(usize, f64)> {
        self.checkpoints.last().copied()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &self.losses {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }

    pub fn validation_csv(&self) -> String {
        let mut s = String::from("iteration,val_precision,new_best\n");
        for (i, p) in &self.validations {
            let best = self.checkpoints.iter().any(|c| c.0 == *i);
            let _ = writeln!(s, "{i},{p},{}", u8::from(best));
        }
        s
    }

    fn write(&self, dir: &Path) -> Result<()> {
        for (name, text) in [(LOSS_LOG, self.loss_csv()), (VALIDATION_LOG, self.validation_csv())] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
        }
        Ok(())
    }

    fn read(dir: &Path) -> Result<Self> {
        let rows = |name: &str| -> Result<Vec<Vec<String>>> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| GaitError::io(&path, e))?;
            Ok(text
                .lines()
                .skip(1)
                .filter(|l| !l.is_empty())
                .map(|l| l.split(',').map(str::to_owned).collect())
                .collect())
        };
        let bad = |name: &str| GaitError::data(format!("{}: malformed training log", dir.join(name).display()));
        let mut log = TrainLog::default();
        for r in rows(LOSS_LOG)? {
            let (Some(i), Some(l)) = (r.first().and_then(|v| v.parse().ok()), r.get(1).and_then(|v| v.parse().ok()))
            else {
                return Err(bad(LOSS_LOG));
            };
            log.losses.push((i, l));
        }
        for r in rows(VALIDATION_LOG)? {
            let (Some(i), Some(p)) = (r.first().and_then(|v| v.parse().ok()), r.get(1).and_then(|v| v.parse().ok()))
            else {
                return Err(bad(VALIDATION_LOG));
            };
            log.validations.push((i, p));
            if r.get(2).map(String::as_str) == Some("1") {
                log.checkpoints.push((i, p));
            }
        }
        Ok(log)
    }
}

pub struct TrainOutcome {
    pub best: ModelParams<f32>,
    pub last: ModelParams<f32>,
    pub log: TrainLog,
}

/// Training state at an iteration boundary.
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub best: ModelParams<f32>,
    pub iteration: usize,
    pub log: TrainLog,
}

impl TrainState {
    pub fn fresh(net: NetConfig, config: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(net, config.pooling, config.seed)?;
        Ok(TrainState {
            best: params.clone(),
            params,
            iteration: 0,
            log: TrainLog::default(),
        })
    }

    /// Reloads the state written by an earlier [`train_loop`] into `dir`.
    pub fn resume(dir: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint_with_meta(&dir.join(LAST_CHECKPOINT))?;
        let iteration: usize = meta
            .require_meta("iteration")?
            .parse()
            .map_err(|_| GaitError::Format("bad '@iteration' entry".into()))?;
        let (best, _) = load_checkpoint_with_meta(&dir.join(BEST_CHECKPOINT))?;
        let mut log = TrainLog::read(dir)?;
        log.losses.retain(|l| l.0 <= iteration);
        log.validations.retain(|v| v.0 <= iteration);
        log.checkpoints.retain(|v| v.0 <= iteration);
        if log.losses.len() != iteration {
            return Err(GaitError::data(format!(
                "{}: loss log has {} rows for {iteration} iterations",
                dir.display(),
                log.losses.len()
            )));
        }
        Ok(TrainState { params, best, iteration, log })
    }
}

fn progress_meta(iteration: usize, config: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("iteration", iteration.to_string()),
        ("seed", config.seed.to_string()),
        ("lr", config.lr.to_string()),
        ("momentum", config.momentum.to_string()),
        ("batch", config.batch_size.to_string()),
    ]
}

fn save_state(state: &TrainState, config: &TrainConfig, dir: &Path) -> Result<()> {
    save_checkpoint_with_meta(&state.params, &dir.join(LAST_CHECKPOINT), &progress_meta(state.iteration, config))?;
    state.log.write(dir)
}

/// Runs SGD from `state` up to `config.max_iterations`. Batch `i` is drawn
/// from sampler substream `i`, so a resumed run replays the same batches.
/// The initial model is validated as iteration 0; every strictly better
/// validation replaces the best model (and `best.ckpt` when `out` is set).
pub fn train_loop(
    train: &PreparedSet,
    val: &PreparedSet,
    config: &TrainConfig,
    mut state: TrainState,
    out: Option<&Path>,
    mut on_event: impl FnMut(&TrainEvent),
) -> Result<TrainOutcome> {
    config.validate()?;
    let sampler = PairSampler::new(&train.dataset)?;
    let val_pairs = validation_pairs(&val.dataset, config.val_pairs, config.seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
    }

    let mut check = |state: &mut TrainState| -> Result<()> {
        let precision = validate(&state.params, val, &val_pairs)?;
        state.log.validations.push((state.iteration, precision));
        let improved = state.log.best().is_none_or(|(_, b)| precision > b);
        if improved {
            state.log.checkpoints.push((state.iteration, precision));
            state.best = state.params.clone();
            if let Some(dir) = out {
                save_checkpoint_with_meta(
                    &state.best,
                    &dir.join(BEST_CHECKPOINT),
                    &[
                        ("iteration", state.iteration.to_string()),
                        ("val_precision", precision.to_string()),
                    ],
                )?;
            }
        }
        on_event(&TrainEvent::Validation {
            iteration: state.iteration,
            precision,
            improved,
        });
        if let Some(dir) = out {
            save_state(state, config, dir)?;
        }
        Ok(())
    };

    if state.iteration == 0 && state.log.validations.is_empty() {
        check(&mut state)?;
    }
    while state.iteration < config.max_iterations {
        let it = state.iteration + 1;
        let batch = sampler.sample(config.batch_size, &mut substream(config.seed, Stream::Sampler, it as u64))?;
        let loss = train_step(&batch, train, &mut state.params, config.lr, config.momentum)?;
        state.iteration = it;
        state.log.losses.push((it, loss));
        if it % config.validate_every == 0 || it == config.max_iterations {
            check(&mut state)?;
        }
    }
    if let Some(dir) = out {
        save_state(&state, config, dir)?;
    }
    Ok(TrainOutcome {
        best: state.best,
        last: state.params,
        log: state.log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainEvent {
    Validation { iteration: usize, precision: f64, improved: bool },
}

/// Paths written by [`train_loop`] under `dir`.
pub fn output_paths(dir: &Path) -> [PathBuf; 4] {
    [BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG, VALIDATION_LOG].map(|n| dir.join(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(z0: f64, z1: f64) -> SimilarityScore {
        SimilarityScore::from_logits(&[z0, z1])
    }

    #[test]
    fn loss_endpoints() {
        let s = score(0.0, 0.0);
        assert!((pair_loss(&s, PairLabel::Same) - std::f64::consts::LN_2).abs() < 1e-15);
        let confident = score(-40.0, 40.0);
        assert!(pair_loss(&confident, PairLabel::Same) < 1e-30);
        assert!((pair_loss(&confident, PairLabel::Different) - 80.0).abs() < 1e-9);
        assert!(pair_loss(&score(1000.0, -1000.0), PairLabel::Same).is_finite());
    }

    #[test]
    fn loss_gradient_is_p_minus_t() {
        let s = score(0.3, -1.2);
        let g = pair_loss_grad(&s, PairLabel::Same);
        let eps = 1e-6;
        for k in 0..2 {
            let mut hi = s.logits;
            let mut lo = s.logits;
            hi[k] += eps;
            lo[k] -= eps;
            let n = (pair_loss(&score(hi[0], hi[1]), PairLabel::Same) - pair_loss(&score(lo[0], lo[1]), PairLabel::Same))
                / (2.0 * eps);
            assert!((n - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn balanced_accuracy_cases() {
        let perfect = [(true, PairLabel::Same), (false, PairLabel::Different)];
        assert_eq!(balanced_accuracy(&perfect), 1.0);
        let always_same = [(true, PairLabel::Same), (true, PairLabel::Different), (true, PairLabel::Different)];
        assert_eq!(balanced_accuracy(&always_same), 0.5);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 3, ..Default::default() },
            TrainConfig { validate_every: 0, ..Default::default() },
            TrainConfig { momentum: -0.1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
