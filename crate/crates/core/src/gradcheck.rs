//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the scalar objective, so it stays
//! independent of every hand-written backward pass it is used against.

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged by absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub layer: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn new(layer: impl Into<String>, max_relative_error: f64, tolerance: f64) -> Self {
        GradCheckReport {
            layer: layer.into(),
            max_relative_error,
            tolerance,
            passed: max_relative_error < tolerance,
        }
    }

    /// Worst case across several reports for the same layer.
    pub fn merge(name: impl Into<String>, reports: &[GradCheckReport]) -> Self {
        let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
        let tol = reports.iter().map(|r| r.tolerance).fold(f64::INFINITY, f64::min);
        GradCheckReport::new(name, worst, tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    if analytic.is_finite() && numeric.is_finite() {
        (analytic - numeric).abs() / denom
    } else {
        f64::INFINITY
    }
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for the listed entries.
pub fn numerical_gradient_at(
    point: &Tensor<f64>,
    eps: f64,
    entries: &[usize],
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Vec<f64> {
    let mut probe = point.clone();
    entries
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn numerical_gradient(point: &Tensor<f64>, eps: f64, f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let entries: Vec<usize> = (0..point.len()).collect();
    let g = numerical_gradient_at(point, eps, &entries, f);
    Tensor::new(point.shape(), g).expect("same shape as point")
}

/// Compare `analytic` against central differences of `f` at every entry.
pub fn check_gradient(
    name: &str,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    tolerance: f64,
    f: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheckReport {
    let entries: Vec<usize> = (0..point.len()).collect();
    check_gradient_entries(name, point, analytic, &entries, eps, tolerance, f)
}

pub fn check_gradient_entries(
    name: &str,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    entries: &[usize],
    eps: f64,
    tolerance: f64,
    f: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheckReport {
    assert_eq!(point.shape(), analytic.shape(), "{name}: gradient shape");
    let numeric = numerical_gradient_at(point, eps, entries, f);
    let worst = entries
        .iter()
        .zip(&numeric)
        .map(|(&i, &n)| relative_error(analytic[i], n))
        .fold(0.0, f64::max);
    GradCheckReport::new(name, worst, tolerance)
}

/// Uniform `[-1, 1)` entries.
pub fn random_tensor<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
}
