use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

/// One SGD-with-momentum update of a single tensor:
/// `v <- momentum * v - lr * g; w <- w + v`. With zero momentum this is
/// exactly `w <- w - lr * g`.
pub fn sgd_update<T: Real>(
    param: &mut Tensor<T>,
    velocity: &mut Tensor<T>,
    grad: &Tensor<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(GaitError::shape("sgd_update", param.shape(), grad.shape()));
    }
    let (lr, mu) = (T::lit(lr), T::lit(momentum));
    for ((w, v), &g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = mu * *v - lr * g;
        *w = *w + *v;
    }
    Ok(())
}

pub fn check_hyperparameters(lr: f64, momentum: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) || !(momentum >= 0.0 && momentum.is_finite()) {
        return Err(GaitError::invalid(format!(
            "learning rate and momentum must be finite and non-negative (lr={lr}, momentum={momentum})"
        )));
    }
    Ok(())
}
