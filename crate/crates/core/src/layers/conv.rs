//! Valid (unpadded) stride-1 2D cross-correlation via im2col + GEMM.

use crate::error::{GaitError, Result};
use crate::tensor::{Real, Tensor};

/// Square-kernel convolution with one bias per output channel. Stride is
/// always 1 and there is no padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Real = f32> {
    /// `[out_ch, in_ch, k, k]`
    pub weights: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[out_ch, _, kh, kw] = weights.shape() else {
            return Err(GaitError::shape("ConvLayer::new", "[out, in, k, k]", weights.shape()));
        };
        if kh != kw {
            return Err(GaitError::invalid(format!("kernel must be square, got {kh}x{kw}")));
        }
        if bias.shape() != [out_ch] {
            return Err(GaitError::shape("ConvLayer::new", [out_ch], bias.shape()));
        }
        Ok(ConvLayer { weights, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        ConvLayer {
            weights: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let k = self.kernel();
        match *input {
            [c, h, w] if c == self.in_channels() && h >= k && w >= k => {
                Ok([self.out_channels(), h - k + 1, w - k + 1])
            }
            _ => Err(GaitError::shape(
                "conv2d",
                format!("[{}, >={k}, >={k}] for weights {:?}", self.in_channels(), self.weights.shape()),
                input,
            )),
        }
    }
}

/// Unfold `[C, H, W]` into `[C*k*k, oh*ow]` patches.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![T::zero(); c * k * k * oh * ow];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let src = &plane[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Fold patch gradients back onto `[C, H, W]`, summing overlaps.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let [oc, oh, ow] = layer.output_shape(input.shape())?;
    let (c, h, w) = input.dims3("conv2d")?;
    let k = layer.kernel();
    let cols = im2col(input.data(), c, h, w, k);
    let mut out = Vec::with_capacity(oc * oh * ow);
    for &b in layer.bias.data() {
        out.extend(std::iter::repeat_n(b, oh * ow));
    }
    T::gemm(oc, c * k * k, oh * ow, layer.weights.data(), false, &cols, false, &mut out, true);
    Tensor::new(&[oc, oh, ow], out)
}

/// Accumulating backward pass used by the network: adds the weight and bias
/// gradients into `grad_weights` / `grad_bias` and returns the input gradient
/// only when `want_input` is set.
pub fn conv2d_backward_accumulate<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    let out_shape = layer.output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(GaitError::shape("conv2d_backward", out_shape, grad_out.shape()));
    }
    if grad_weights.shape() != layer.weights.shape() || grad_bias.shape() != layer.bias.shape() {
        return Err(GaitError::shape(
            "conv2d_backward",
            layer.weights.shape(),
            grad_weights.shape(),
        ));
    }
    let (c, h, w) = input.dims3("conv2d_backward")?;
    let [oc, oh, ow] = out_shape;
    let k = layer.kernel();
    let patch = c * k * k;
    let g = grad_out.data();

    let nonzero = g.iter().filter(|v| !v.is_zero()).count();
    if nonzero * SPARSE_RATIO < g.len() {
        return Ok(sparse_backward(input, layer, grad_out, grad_weights, grad_bias, want_input));
    }
    let cols = im2col(input.data(), c, h, w, k);

    T::gemm(oc, oh * ow, patch, g, false, &cols, true, grad_weights.data_mut(), true);
    for (o, gb) in grad_bias.data_mut().iter_mut().enumerate() {
        *gb = *gb + g[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum();
    }

    if !want_input {
        return Ok(None);
    }
    let mut grad_cols = vec![T::zero(); patch * oh * ow];
    T::gemm(patch, oc, oh * ow, layer.weights.data(), true, g, false, &mut grad_cols, false);
    Tensor::new(&[c, h, w], col2im(&grad_cols, c, h, w, k)).map(Some)
}

/// Below one nonzero upstream gradient in this many, direct scatter beats
/// the two GEMMs. Temporal max pooling makes per-frame gradients this sparse.
const SPARSE_RATIO: usize = 8;

/// Same sums as the GEMM path, visiting only nonzero upstream entries.
fn sparse_backward<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oc, oh, ow) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let k = layer.kernel();
    let (x, wt, g) = (input.data(), layer.weights.data(), grad_out.data());
    let mut gx = want_input.then(|| vec![T::zero(); c * h * w]);
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[(o * oh + oy) * ow + ox];
                if v.is_zero() {
                    continue;
                }
                gb[o] = gb[o] + v;
                for ci in 0..c {
                    for ki in 0..k {
                        let wi = ((o * c + ci) * k + ki) * k;
                        let xi = (ci * h + oy + ki) * w + ox;
                        for (a, &b) in gw[wi..wi + k].iter_mut().zip(&x[xi..xi + k]) {
                            *a = *a + v * b;
                        }
                        if let Some(gx) = gx.as_mut() {
                            for (a, &b) in gx[xi..xi + k].iter_mut().zip(&wt[wi..wi + k]) {
                                *a = *a + v * b;
                            }
                        }
                    }
                }
            }
        }
    }
    gx.map(|d| Tensor::new(&[c, h, w], d).expect("input shape"))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut gw = Tensor::zeros_like(&layer.weights);
    let mut gb = Tensor::zeros_like(&layer.bias);
    let gi = conv2d_backward_accumulate(input, layer, grad_out, &mut gw, &mut gb, true)?
        .expect("input gradient requested");
    Ok((gi, gw, gb))
}
