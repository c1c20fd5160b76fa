//! Temporal feature-map pooling: fold an arbitrary number of per-frame
//! feature maps into one fixed-size map by elementwise max or mean.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Max => "max",
            PoolingMode::Mean => "mean",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolingMode::Max),
            "mean" => Ok(PoolingMode::Mean),
            other => Err(GaitError::invalid(format!("unknown pooling mode '{other}'"))),
        }
    }
}

/// Feature maps of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeature<T: Real = f32> {
    pub maps: Tensor<T>,
    pub frame_index: usize,
}

/// Sequence-level representation produced by pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature<T: Real = f32> {
    pub maps: Tensor<T>,
    pub mode: PoolingMode,
    pub source_length: usize,
}

fn common_shape<T: Real>(features: &[FrameFeature<T>], op: &'static str) -> Result<Vec<usize>> {
    let first = features
        .first()
        .ok_or_else(|| GaitError::invalid(format!("{op}: cannot pool an empty frame list")))?;
    let shape = first.maps.shape().to_vec();
    if let Some(bad) = features.iter().find(|f| f.maps.shape() != shape.as_slice()) {
        return Err(GaitError::shape(op, &shape, bad.maps.shape()));
    }
    Ok(shape)
}

pub fn pool_max<T: Real>(features: &[FrameFeature<T>]) -> Result<FusedFeature<T>> {
    let shape = common_shape(features, "pool_max")?;
    let mut out = features[0].maps.clone();
    for f in &features[1..] {
        for (o, &v) in out.data_mut().iter_mut().zip(f.maps.data()) {
            if v > *o {
                *o = v;
            }
        }
    }
    debug_assert_eq!(out.shape(), shape.as_slice());
    Ok(FusedFeature {
        maps: out,
        mode: PoolingMode::Max,
        source_length: features.len(),
    })
}

/// Accumulates in `f64` regardless of `T`.
pub fn pool_mean<T: Real>(features: &[FrameFeature<T>]) -> Result<FusedFeature<T>> {
    let shape = common_shape(features, "pool_mean")?;
    let mut acc = vec![0.0f64; features[0].maps.len()];
    for f in features {
        for (a, v) in acc.iter_mut().zip(f.maps.data()) {
            *a += v.as_f64();
        }
    }
    let n = features.len() as f64;
    let maps = Tensor::new(&shape, acc.into_iter().map(|a| T::lit(a / n)).collect())?;
    Ok(FusedFeature {
        maps,
        mode: PoolingMode::Mean,
        source_length: features.len(),
    })
}

pub fn pool<T: Real>(features: &[FrameFeature<T>], mode: PoolingMode) -> Result<FusedFeature<T>> {
    match mode {
        PoolingMode::Max => pool_max(features),
        PoolingMode::Mean => pool_mean(features),
    }
}

/// Each position's gradient goes to the frame holding the maximum (earliest
/// frame on ties); every other frame gets zero there.
pub fn pool_backward_max<T: Real>(features: &[FrameFeature<T>], grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let shape = common_shape(features, "pool_backward_max")?;
    if grad_out.shape() != shape.as_slice() {
        return Err(GaitError::shape("pool_backward_max", &shape, grad_out.shape()));
    }
    let n = grad_out.len();
    let mut winner = vec![0usize; n];
    let mut best = features[0].maps.data().to_vec();
    for (t, f) in features.iter().enumerate().skip(1) {
        for ((w, b), &v) in winner.iter_mut().zip(best.iter_mut()).zip(f.maps.data()) {
            if v > *b {
                *b = v;
                *w = t;
            }
        }
    }
    let mut grads = vec![Tensor::zeros(&shape); features.len()];
    for (i, (&t, &g)) in winner.iter().zip(grad_out.data()).enumerate() {
        grads[t][i] = g;
    }
    Ok(grads)
}

pub fn pool_backward_mean<T: Real>(features: &[FrameFeature<T>], grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let shape = common_shape(features, "pool_backward_mean")?;
    if grad_out.shape() != shape.as_slice() {
        return Err(GaitError::shape("pool_backward_mean", &shape, grad_out.shape()));
    }
    let inv = T::one() / T::lit(features.len() as f64);
    let share = grad_out.map(|g| g * inv);
    Ok(vec![share; features.len()])
}

pub fn pool_backward<T: Real>(
    features: &[FrameFeature<T>],
    grad_out: &Tensor<T>,
    mode: PoolingMode,
) -> Result<Vec<Tensor<T>>> {
    match mode {
        PoolingMode::Max => pool_backward_max(features, grad_out),
        PoolingMode::Mean => pool_backward_mean(features, grad_out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(ts: Vec<Tensor<f64>>) -> Vec<FrameFeature<f64>> {
        ts.into_iter()
            .enumerate()
            .map(|(i, maps)| FrameFeature { maps, frame_index: i + 1 })
            .collect()
    }

    #[test]
    fn single_frame_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = frames(vec![random_tensor(&[2, 3, 3], &mut rng)]);
        assert_eq!(pool_max(&f).unwrap().maps, f[0].maps);
        assert_eq!(pool_mean(&f).unwrap().maps, f[0].maps);
    }

    #[test]
    fn max_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = frames((0..5).map(|_| random_tensor(&[2, 3, 3], &mut rng)).collect());
        let fused = pool_max(&f).unwrap();
        for k in 0..2 {
            for h in 0..3 {
                for w in 0..3 {
                    let i = (k * 3 + h) * 3 + w;
                    let mut m = f64::NEG_INFINITY;
                    for fr in &f {
                        m = m.max(fr.maps[i]);
                    }
                    assert_eq!(fused.maps[i], m);
                }
            }
        }
        assert_eq!(fused.source_length, 5);
    }

    #[test]
    fn mean_of_zero_and_one_maps() {
        let f = frames(vec![Tensor::zeros(&[1, 2, 2]), Tensor::filled(&[1, 2, 2], 1.0)]);
        assert!(pool_mean(&f).unwrap().maps.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mean_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<FrameFeature<f32>> = (0..7)
            .map(|t| FrameFeature { maps: random_tensor(&[2, 3, 3], &mut rng), frame_index: t })
            .collect();
        let fused = pool_mean(&f).unwrap();
        for i in 0..18 {
            let mut s = 0.0f64;
            for fr in &f {
                s += fr.maps[i] as f64;
            }
            assert!((fused.maps[i] as f64 - s / 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_and_ragged_rejected() {
        assert!(pool_max::<f32>(&[]).is_err());
        assert!(pool_mean::<f32>(&[]).is_err());
        let f = frames(vec![Tensor::zeros(&[1, 2, 2]), Tensor::zeros(&[1, 2, 3])]);
        assert!(pool_max(&f).is_err());
        assert!(pool_backward_max(&f[..1], &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn paper_lengths_keep_shape() {
        for t in [1, 2, 19, 43] {
            let f: Vec<FrameFeature<f32>> = (0..t)
                .map(|i| FrameFeature { maps: Tensor::filled(&[64, 27, 27], i as f32), frame_index: i })
                .collect();
            assert_eq!(pool_max(&f).unwrap().maps.shape(), [64, 27, 27]);
            assert_eq!(pool_mean(&f).unwrap().maps.shape(), [64, 27, 27]);
        }
    }

    #[test]
    fn max_ties_go_to_earliest_frame() {
        let f = frames(vec![Tensor::filled(&[1, 1, 2], 1.0), Tensor::filled(&[1, 1, 2], 1.0)]);
        let g = pool_backward_max(&f, &Tensor::filled(&[1, 1, 2], 3.0)).unwrap();
        assert_eq!(g[0].data(), [3.0, 3.0]);
        assert_eq!(g[1].data(), [0.0, 0.0]);
    }

    #[test]
    fn finite_difference_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 4;
        let shape = [2, 2, 3];
        // Distinct values everywhere -> strict argmax across frames.
        let n = t * 12;
        let stacked = Tensor::from_fn(&[t, 2, 2, 3], |i| ((i * 29) % n) as f64 * 0.05 - 1.0);
        let up = random_tensor::<f64>(&shape, &mut rng);
        let split = |s: &Tensor<f64>| {
            frames((0..t).map(|i| Tensor::new(&shape, s.data()[i * 12..(i + 1) * 12].to_vec()).unwrap()).collect())
        };
        for mode in [PoolingMode::Max, PoolingMode::Mean] {
            let g = pool_backward(&split(&stacked), &up, mode).unwrap();
            let flat: Vec<f64> = g.iter().flat_map(|x| x.data().to_vec()).collect();
            let analytic = Tensor::new(stacked.shape(), flat).unwrap();
            let r = check_gradient("pool", &stacked, &analytic, 1e-5, 1e-4, |s| {
                let fused = pool(&split(s), mode).unwrap();
                fused.maps.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            });
            assert!(r.passed, "{mode}: {r:?}");
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("max".parse::<PoolingMode>().unwrap(), PoolingMode::Max);
        assert_eq!("mean".parse::<PoolingMode>().unwrap(), PoolingMode::Mean);
        assert!("avg".parse::<PoolingMode>().is_err());
    }
}
