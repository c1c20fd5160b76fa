use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(GaitError::shape("relu_backward", input.shape(), grad_out.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn negative_to_zero_and_identity_on_nonnegative() {
        let neg = Tensor::<f32>::new(&[3], vec![-1.0, -0.5, -3.0]).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f32>::new(&[3], vec![0.0, 0.5, 3.0]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn finite_difference_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor::<f64>(&[4, 5], &mut rng).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        let up = random_tensor::<f64>(&[4, 5], &mut rng);
        let g = relu_backward(&x, &up).unwrap();
        let r = check_gradient("relu", &x, &g, 1e-5, 1e-6, |p| {
            relu_forward(p).data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        });
        assert!(r.passed, "{r:?}");
    }
}
