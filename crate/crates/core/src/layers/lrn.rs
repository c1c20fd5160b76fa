//! Across-channel local response normalization.
//!
//! `b[c] = a[c] / (k + alpha * sum_{c' in [c-n, c+n]} a[c']^2)^beta`, with the
//! window clipped at the first and last channel.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    /// Channels on each side of the centre channel.
    pub radius: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    /// AlexNet settings: window of 5 channels, k = 2, alpha = 1e-4, beta = 0.75.
    fn default() -> Self {
        LrnParams {
            radius: 2,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn new(radius: usize, k: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = LrnParams { radius, k, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 || !(self.k > 0.0) || !(self.alpha >= 0.0) || !(self.beta > 0.0) {
            return Err(GaitError::invalid(format!(
                "LRN needs radius >= 1, k > 0, alpha >= 0, beta > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `scale[c] = k + alpha * windowed sum of squares`, per spatial position.
fn scales<T: Real>(x: &[T], c: usize, plane: usize, p: &LrnParams) -> Vec<T> {
    let (k, alpha) = (T::lit(p.k), T::lit(p.alpha));
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut out = vec![T::zero(); c * plane];
    for ci in 0..c {
        let lo = ci.saturating_sub(p.radius);
        let hi = (ci + p.radius).min(c - 1);
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for cj in lo..=hi {
            for (d, &s) in dst.iter_mut().zip(&sq[cj * plane..(cj + 1) * plane]) {
                *d = *d + s;
            }
        }
        for d in dst.iter_mut() {
            *d = k + alpha * *d;
        }
    }
    out
}

/// `s^-beta`, with a sqrt-only path for the default beta of 0.75.
fn inv_pow<T: Real>(s: T, beta: f64) -> T {
    if beta == 0.75 {
        let r = s.sqrt();
        (r * r.sqrt()).recip()
    } else {
        s.powf(T::lit(-beta))
    }
}

pub fn lrn_forward<T: Real>(input: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("lrn")?;
    let s = scales(input.data(), c, h * w, p);
    let out = input.data().iter().zip(&s).map(|(&a, &sc)| a * inv_pow(sc, p.beta)).collect();
    Tensor::new(input.shape(), out)
}

pub fn lrn_backward<T: Real>(input: &Tensor<T>, p: &LrnParams, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(GaitError::shape("lrn_backward", input.shape(), grad_out.shape()));
    }
    let (c, h, w) = input.dims3("lrn_backward")?;
    let plane = h * w;
    let x = input.data();
    let g = grad_out.data();
    let s = scales(x, c, plane, p);
    let q: Vec<T> = s.iter().map(|&v| inv_pow(v, p.beta)).collect();

    // d b[c] / d a[j] = [c == j] s_c^-beta - 2 alpha beta a_c a_j s_c^(-beta-1) for j in window(c)
    let t: Vec<T> = (0..c * plane).map(|i| g[i] * x[i] * q[i] / s[i]).collect();
    let coef = T::lit(2.0 * p.alpha * p.beta);
    let mut out = vec![T::zero(); c * plane];
    for cj in 0..c {
        let lo = cj.saturating_sub(p.radius);
        let hi = (cj + p.radius).min(c - 1);
        let dst = &mut out[cj * plane..(cj + 1) * plane];
        for ci in lo..=hi {
            for (d, &tv) in dst.iter_mut().zip(&t[ci * plane..(ci + 1) * plane]) {
                *d = *d + tv;
            }
        }
        for (i, d) in dst.iter_mut().enumerate() {
            let idx = cj * plane + i;
            *d = g[idx] * q[idx] - coef * x[idx] * *d;
        }
    }
    Tensor::new(input.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_oracle(x: &Tensor<f64>, p: &LrnParams) -> Tensor<f64> {
        let (c, h, w) = x.dims3("oracle").unwrap();
        Tensor::from_fn(&[c, h, w], |idx| {
            let (ci, pos) = (idx / (h * w), idx % (h * w));
            let mut sum = 0.0;
            for cj in 0..c {
                if (cj as isize - ci as isize).unsigned_abs() <= p.radius {
                    sum += x[cj * h * w + pos].powi(2);
                }
            }
            x[idx] / (p.k + p.alpha * sum).powf(p.beta)
        })
    }

    #[test]
    fn zero_maps_to_zero() {
        let y = lrn_forward(&Tensor::<f64>::zeros(&[5, 3, 3]), &LrnParams::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_scalar_formula() {
        let p = LrnParams::new(2, 1.5, 0.3, 0.6).unwrap();
        let x = Tensor::<f64>::new(&[1, 1, 3], vec![-2.0, 0.5, 4.0]).unwrap();
        let y = lrn_forward(&x, &p).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((b - a / (1.5 + 0.3 * a * a).powf(0.6)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor::<f64>(&[8, 3, 3], &mut rng).map(|v| v * 30.0);
        let p = LrnParams::default();
        let d = lrn_forward(&x, &p).unwrap().max_abs_diff(&scalar_oracle(&x, &p)).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn alpha_zero_with_unit_k_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor::<f64>(&[4, 2, 2], &mut rng);
        let p = LrnParams::new(2, 1.0, 0.0, 0.75).unwrap();
        assert_eq!(lrn_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(LrnParams::new(0, 2.0, 1e-4, 0.75).is_err());
        assert!(LrnParams::new(2, 0.0, 1e-4, 0.75).is_err());
        assert!(LrnParams::new(2, 2.0, -1.0, 0.75).is_err());
        assert!(LrnParams::new(2, 2.0, 1e-4, 0.0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor::<f64>(&[6, 2, 2], &mut rng);
        let g = lrn_backward(&x, &LrnParams::default(), &Tensor::zeros(&[6, 2, 2])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_hand_derivative() {
        // d/da [a (k + alpha a^2)^-beta] = s^-beta - 2 alpha beta a^2 s^(-beta-1)
        let p = LrnParams::new(1, 2.0, 0.5, 0.75).unwrap();
        let a = 1.3;
        let s: f64 = 2.0 + 0.5 * a * a;
        let expected = s.powf(-0.75) - 2.0 * 0.5 * 0.75 * a * a * s.powf(-1.75);
        let x = Tensor::new(&[1, 1, 1], vec![a]).unwrap();
        let g = lrn_backward(&x, &p, &Tensor::filled(&[1, 1, 1], 1.0)).unwrap();
        assert!((g[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_random_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Large activations and a strong alpha so the cross-channel term matters.
        let p = LrnParams::new(2, 2.0, 0.05, 0.75).unwrap();
        let x = random_tensor::<f64>(&[7, 3, 2], &mut rng).map(|v| v * 4.0);
        let up = random_tensor::<f64>(&[7, 3, 2], &mut rng);
        let g = lrn_backward(&x, &p, &up).unwrap();
        let r = check_gradient("lrn", &x, &g, 1e-5, 1e-4, |xx| {
            let y = lrn_forward(xx, &p).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        });
        assert!(r.passed, "{r:?}");
    }
}
