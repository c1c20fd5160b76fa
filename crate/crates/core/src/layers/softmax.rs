use crate::tensor::Real;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_logits_split_evenly() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0f64, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
        let lp = log_softmax(&[1000.0f64, 0.0]);
        assert!((lp[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn two_class_closed_form() {
        // For two classes p1 = 1 / (1 + exp(z0 - z1)); computed here via
        // tanh, a route that never forms the exponentials softmax uses.
        for &(z0, z1) in &[(0.3f64, -1.2), (-7.5, 2.25), (40.0, 39.0), (1e-3, 0.0)] {
            let p = softmax(&[z0, z1]);
            let p1 = 0.5 * (1.0 + ((z1 - z0) / 2.0).tanh());
            assert!((p[1] - p1).abs() < 1e-12);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }
}
