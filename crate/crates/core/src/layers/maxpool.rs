//! Disjoint 2x2 max pooling (stride 2).

use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

/// Flat input offsets of each output's maximum, recorded by the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.input_shape;
        [c, h / 2, w / 2]
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2x2_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w) = input.dims3("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(GaitError::shape("maxpool2x2", "even spatial extents", input.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Real>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != indices.output_shape() {
        return Err(GaitError::shape(
            "maxpool2x2_backward",
            indices.output_shape(),
            grad_out.shape(),
        ));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    let gi = grad_in.data_mut();
    for (&src, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[src] = gi[src] + g;
    }
    Ok(grad_in)
}
