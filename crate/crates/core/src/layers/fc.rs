use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

/// Affine map `y = W x + b` on a flattened input.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer<T: Real = f32> {
    /// `[K, D]`
    pub weights: Tensor<T>,
    /// `[K]`
    pub bias: Tensor<T>,
}

impl<T: Real> FcLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[k, _] = weights.shape() else {
            return Err(GaitError::shape("FcLayer::new", "[K, D]", weights.shape()));
        };
        if bias.shape() != [k] {
            return Err(GaitError::shape("FcLayer::new", [k], bias.shape()));
        }
        Ok(FcLayer { weights, bias })
    }

    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        FcLayer {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check_input(&self, input: &Tensor<T>, op: &'static str) -> Result<()> {
        if input.len() != self.inputs() {
            return Err(GaitError::shape(op, [self.inputs()], input.shape()));
        }
        Ok(())
    }
}

/// Any input shape is accepted and read as a flat vector of length `D`.
pub fn fc_forward<T: Real>(input: &Tensor<T>, layer: &FcLayer<T>) -> Result<Tensor<T>> {
    layer.check_input(input, "fc_forward")?;
    let mut out = layer.bias.data().to_vec();
    T::gemm(layer.outputs(), layer.inputs(), 1, layer.weights.data(), false, input.data(), false, &mut out, true);
    Tensor::new(&[layer.outputs()], out)
}

/// Adds `g x^T` and `g` into the parameter gradients; returns `W^T g` shaped like `input`.
pub fn fc_backward_accumulate<T: Real>(
    input: &Tensor<T>,
    layer: &FcLayer<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    layer.check_input(input, "fc_backward")?;
    if grad_out.shape() != [layer.outputs()] {
        return Err(GaitError::shape("fc_backward", [layer.outputs()], grad_out.shape()));
    }
    let (k, d) = (layer.outputs(), layer.inputs());
    T::gemm(k, 1, d, grad_out.data(), false, input.data(), false, grad_weights.data_mut(), true);
    grad_bias.add_assign(grad_out)?;
    let mut gx = vec![T::zero(); d];
    T::gemm(d, k, 1, layer.weights.data(), true, grad_out.data(), false, &mut gx, false);
    Tensor::new(input.shape(), gx)
}

/// Returns `(grad_weights, grad_bias, grad_input)`.
pub fn fc_backward<T: Real>(
    input: &Tensor<T>,
    layer: &FcLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut gw = Tensor::zeros_like(&layer.weights);
    let mut gb = Tensor::zeros_like(&layer.bias);
    let gx = fc_backward_accumulate(input, layer, grad_out, &mut gw, &mut gb)?;
    Ok((gw, gb, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let eye = Tensor::<f64>::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let layer = FcLayer::new(eye, Tensor::zeros(&[4])).unwrap();
        let x = Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(fc_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn paper_head_dimensions() {
        let layer = FcLayer::<f32>::zeros(2, 112_896);
        let x = Tensor::zeros(&[256, 21, 21]);
        assert_eq!(fc_forward(&x, &layer).unwrap().shape(), [2]);
        assert!(fc_forward(&Tensor::zeros(&[100]), &layer).is_err());
    }

    #[test]
    fn finite_difference_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = FcLayer::new(random_tensor::<f64>(&[3, 5], &mut rng), random_tensor(&[3], &mut rng)).unwrap();
        let x = random_tensor::<f64>(&[5], &mut rng);
        let up = random_tensor::<f64>(&[3], &mut rng);
        let (gw, gb, gx) = fc_backward(&x, &layer, &up).unwrap();
        let obj = |x: &Tensor<f64>, l: &FcLayer<f64>| -> f64 {
            fc_forward(x, l).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        for r in [
            check_gradient("fc.input", &x, &gx, 1e-5, 1e-6, |p| obj(p, &layer)),
            check_gradient("fc.weights", &layer.weights, &gw, 1e-5, 1e-6, |w| {
                obj(&x, &FcLayer::new(w.clone(), layer.bias.clone()).unwrap())
            }),
            check_gradient("fc.bias", &layer.bias, &gb, 1e-5, 1e-6, |b| {
                obj(&x, &FcLayer::new(layer.weights.clone(), b.clone()).unwrap())
            }),
        ] {
            assert!(r.passed, "{r:?}");
        }
    }
}
