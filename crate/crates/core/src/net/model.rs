//! Forward and backward passes of the pairwise similarity network.
//!
//! ```text
//! step input [2,S,S] -> fCNN -> [C2,F,F] per frame -> temporal pool -> fused
//! |fused_a - fused_b| -> mCNN conv -> ReLU -> flatten -> fc -> softmax
//! ```

use rayon::prelude::*;

use super::config::{DIFF_INDEX, SAME_INDEX};
use super::params::{Gradients, ModelParams};
use crate::data::{make_step_inputs, SilhouetteSequence};
use crate::error::{GaitError, Result};
use crate::layers::{
    conv2d_backward_accumulate, conv2d_forward, fc_backward_accumulate, fc_forward, lrn_backward, lrn_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, softmax, PoolIndices,
};
use crate::seqpool::{pool, pool_backward, FrameFeature, FusedFeature, PoolingMode};
use crate::tensor::{Real, Tensor};

/// Output distribution of the fully connected head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityScore {
    pub p_same: f64,
    pub p_diff: f64,
    pub logits: [f64; 2],
}

impl SimilarityScore {
    pub fn from_logits<T: Real>(logits: &[T]) -> Self {
        let z = [logits[DIFF_INDEX].as_f64(), logits[SAME_INDEX].as_f64()];
        let p = softmax(&z);
        SimilarityScore {
            p_same: p[SAME_INDEX],
            p_diff: p[DIFF_INDEX],
            logits: z,
        }
    }

    pub fn predicts_same(&self) -> bool {
        self.p_same > self.p_diff
    }
}

/// Intermediates of one fCNN pass kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FrameTrace<T: Real> {
    input: Tensor<T>,
    conv1: Tensor<T>,
    pool1_idx: PoolIndices,
    pool1: Tensor<T>,
    lrn1: Tensor<T>,
    conv2: Tensor<T>,
    pool2_idx: PoolIndices,
    pool2: Tensor<T>,
}

fn check_input<T: Real>(input: &Tensor<T>, params: &ModelParams<T>) -> Result<()> {
    let expected = params.config.shape_chain()?.input;
    if input.shape() != expected {
        return Err(GaitError::shape("fcnn_forward", expected, input.shape()));
    }
    Ok(())
}

fn fcnn_traced<T: Real>(input: &Tensor<T>, params: &ModelParams<T>) -> Result<(Tensor<T>, FrameTrace<T>)> {
    check_input(input, params)?;
    let lrn = &params.config.lrn;
    let conv1 = conv2d_forward(input, &params.conv1)?;
    let (pool1, pool1_idx) = maxpool2x2_forward(&relu_forward(&conv1))?;
    let lrn1 = lrn_forward(&pool1, lrn)?;
    let conv2 = conv2d_forward(&lrn1, &params.conv2)?;
    let (pool2, pool2_idx) = maxpool2x2_forward(&relu_forward(&conv2))?;
    let feature = lrn_forward(&pool2, lrn)?;
    let trace = FrameTrace {
        input: input.clone(),
        conv1,
        pool1_idx,
        pool1,
        lrn1,
        conv2,
        pool2_idx,
        pool2,
    };
    Ok((feature, trace))
}

/// Per-frame feature extractor: `[2,S,S]` to `[C2,F,F]`.
pub fn fcnn_forward<T: Real>(input: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    fcnn_traced(input, params).map(|(f, _)| f)
}

/// Accumulates fCNN parameter gradients. The network input needs no
/// gradient, so conv1 skips its input-gradient GEMM.
fn fcnn_backward<T: Real>(
    trace: &FrameTrace<T>,
    grad_feature: &Tensor<T>,
    params: &ModelParams<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let lrn = &params.config.lrn;
    let g = lrn_backward(&trace.pool2, lrn, grad_feature)?;
    let g = maxpool2x2_backward(&trace.pool2_idx, &g)?;
    let g = relu_backward(&trace.conv2, &g)?;
    let (gw, gb) = grads.conv_mut(1);
    let g = conv2d_backward_accumulate(&trace.lrn1, &params.conv2, &g, gw, gb, true)?
        .expect("input gradient requested");
    let g = lrn_backward(&trace.pool1, lrn, &g)?;
    let g = maxpool2x2_backward(&trace.pool1_idx, &g)?;
    let g = relu_backward(&trace.conv1, &g)?;
    let (gw, gb) = grads.conv_mut(0);
    conv2d_backward_accumulate(&trace.input, &params.conv1, &g, gw, gb, false)?;
    Ok(())
}

/// Fused feature of pre-built step inputs.
pub fn embed_steps<T: Real>(steps: &[Tensor<T>], params: &ModelParams<T>, mode: PoolingMode) -> Result<FusedFeature<T>> {
    if steps.is_empty() {
        return Err(GaitError::invalid("cannot embed a sequence with no step inputs"));
    }
    let features = steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            fcnn_forward(s, params).map(|maps| FrameFeature {
                maps,
                frame_index: i + 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pool(&features, mode)
}

pub fn sequence_steps<T: Real>(seq: &SilhouetteSequence) -> Vec<Tensor<T>> {
    make_step_inputs(seq).iter().map(|s| s.data.cast()).collect()
}

/// fCNN on every step of `seq`, then temporal pooling.
pub fn embed_sequence<T: Real>(
    seq: &SilhouetteSequence,
    params: &ModelParams<T>,
    mode: PoolingMode,
) -> Result<FusedFeature<T>> {
    embed_steps(&sequence_steps::<T>(seq), params, mode)
}

/// Everything needed to backpropagate into fCNN from a fused-feature gradient.
pub struct SequenceTrace<T: Real> {
    frames: Vec<FrameTrace<T>>,
    features: Vec<FrameFeature<T>>,
    pub fused: FusedFeature<T>,
}

pub fn embed_traced<T: Real>(
    steps: &[Tensor<T>],
    params: &ModelParams<T>,
    mode: PoolingMode,
) -> Result<SequenceTrace<T>> {
    if steps.is_empty() {
        return Err(GaitError::invalid("cannot embed a sequence with no step inputs"));
    }
    let mut frames = Vec::with_capacity(steps.len());
    let mut features = Vec::with_capacity(steps.len());
    for (i, s) in steps.iter().enumerate() {
        let (maps, trace) = fcnn_traced(s, params)?;
        frames.push(trace);
        features.push(FrameFeature {
            maps,
            frame_index: i + 1,
        });
    }
    let fused = pool(&features, mode)?;
    Ok(SequenceTrace {
        frames,
        features,
        fused,
    })
}

pub fn embed_backward<T: Real>(
    trace: &SequenceTrace<T>,
    grad_fused: &Tensor<T>,
    params: &ModelParams<T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    let per_frame = pool_backward(&trace.features, grad_fused, trace.fused.mode)?;
    for (frame, g) in trace.frames.iter().zip(&per_frame) {
        if g.data().iter().all(|v| v.is_zero()) {
            continue;
        }
        fcnn_backward(frame, g, params, grads)?;
    }
    Ok(())
}

/// Intermediates of the comparator for one pair.
pub struct CompareTrace<T: Real> {
    diff: Tensor<T>,
    mcnn: Tensor<T>,
    hidden: Tensor<T>,
    pub logits: Tensor<T>,
}

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &ModelParams<T>) -> Result<()> {
    let expected = params.config.shape_chain()?.feature;
    for t in [a, b] {
        if t.shape() != expected {
            return Err(GaitError::shape("compare", expected, t.shape()));
        }
    }
    Ok(())
}

pub fn compare_traced<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &ModelParams<T>) -> Result<CompareTrace<T>> {
    check_pair(a, b, params)?;
    let diff = Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).collect(),
    )?;
    let mcnn = conv2d_forward(&diff, &params.mcnn)?;
    let hidden = relu_forward(&mcnn);
    let logits = fc_forward(&hidden, &params.fc)?;
    Ok(CompareTrace {
        diff,
        mcnn,
        hidden,
        logits,
    })
}

/// Returns the gradients with respect to the two fused maps.
pub fn compare_backward<T: Real>(
    trace: &CompareTrace<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_logits: &Tensor<T>,
    params: &ModelParams<T>,
    grads: &mut Gradients<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g_hidden = {
        let (head, tail) = grads.tensors.split_at_mut(7);
        fc_backward_accumulate(&trace.hidden, &params.fc, grad_logits, &mut head[6], &mut tail[0])?
    };
    let g_mcnn = relu_backward(&trace.mcnn, &g_hidden)?;
    let (gw, gb) = grads.conv_mut(2);
    let g_diff = conv2d_backward_accumulate(&trace.diff, &params.mcnn, &g_mcnn, gw, gb, true)?
        .expect("input gradient requested");
    // d|a-b|/da = sign(a-b), taking 0 where a == b.
    let mut grad_a = Vec::with_capacity(a.len());
    let mut grad_b = Vec::with_capacity(a.len());
    for ((&x, &y), &g) in a.data().iter().zip(b.data()).zip(g_diff.data()) {
        let s = if x > y {
            g
        } else if x < y {
            -g
        } else {
            T::zero()
        };
        grad_a.push(s);
        grad_b.push(-s);
    }
    Ok((Tensor::new(a.shape(), grad_a)?, Tensor::new(b.shape(), grad_b)?))
}

pub fn compare_logits<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    compare_traced(a, b, params).map(|t| t.logits)
}

/// Absolute difference, mCNN, fully connected head, softmax.
pub fn compare<T: Real>(a: &FusedFeature<T>, b: &FusedFeature<T>, params: &ModelParams<T>) -> Result<SimilarityScore> {
    let logits = compare_logits(&a.maps, &b.maps, params)?;
    Ok(SimilarityScore::from_logits(logits.data()))
}

/// Both sequences go through the same parameters, then [`compare`].
pub fn forward_pair<T: Real>(
    a: &SilhouetteSequence,
    b: &SilhouetteSequence,
    params: &ModelParams<T>,
    mode: PoolingMode,
) -> Result<SimilarityScore> {
    let (fa, fb) = rayon::join(
        || embed_sequence(a, params, mode),
        || embed_sequence(b, params, mode),
    );
    compare(&fa?, &fb?, params)
}

/// Fused features of many step lists; ordered like `inputs`.
pub fn embed_many<T: Real>(
    inputs: &[&[Tensor<T>]],
    params: &ModelParams<T>,
    mode: PoolingMode,
) -> Result<Vec<FusedFeature<T>>> {
    inputs.par_iter().map(|s| embed_steps(s, params, mode)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::NetConfig;

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let p = ModelParams::<f32>::init(NetConfig::tiny(), PoolingMode::Max, 1).unwrap();
        let chain = p.config.shape_chain().unwrap();
        let f = fcnn_forward(&Tensor::zeros(&chain.input), &p).unwrap();
        assert_eq!(f.shape(), chain.feature);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let p = ModelParams::<f32>::init(NetConfig::gradcheck(), PoolingMode::Max, 1).unwrap();
        assert!(fcnn_forward(&Tensor::zeros(&[2, 48, 48]), &p).is_err());
        assert!(fcnn_forward(&Tensor::zeros(&[1, 46, 46]), &p).is_err());
        let bad = Tensor::zeros(&[2, 6, 6]);
        assert!(compare_logits(&bad, &bad, &p).is_err());
    }

    #[test]
    fn self_pairs_share_one_score() {
        let p = ModelParams::<f32>::init(NetConfig::gradcheck(), PoolingMode::Max, 4).unwrap();
        let shape = p.config.shape_chain().unwrap().feature;
        let a = Tensor::from_fn(&shape, |i| (i as f32 * 0.37).sin().abs());
        let b = Tensor::from_fn(&shape, |i| (i as f32 * 0.11).cos().abs());
        let sa = SimilarityScore::from_logits(compare_logits(&a, &a, &p).unwrap().data());
        let sb = SimilarityScore::from_logits(compare_logits(&b, &b, &p).unwrap().data());
        assert_eq!(sa, sb);
        assert!((sa.p_same + sa.p_diff - 1.0).abs() < 1e-12);
    }
}
