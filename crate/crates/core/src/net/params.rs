use rand::Rng;

use super::config::{NetConfig, FC_OUTPUTS, INPUT_CHANNELS, KERNEL_SIZE};
use crate::error::{GaitError, Result};
use crate::layers::{sgd::check_hyperparameters, sgd_update, ConvLayer, FcLayer};
use crate::rng::{substream, Stream};
use crate::seqpool::PoolingMode;
use crate::tensor::{Real, Tensor};

/// Parameter tensor names in canonical (checkpoint) order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "mcnn.weight",
    "mcnn.bias",
    "fc.weight",
    "fc.bias",
];

/// One tensor per entry of [`PARAM_NAMES`]. Used for gradients and for the
/// optimizer velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.scale_in_place(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        PARAM_NAMES.iter().position(|&n| n == name).map(|i| &self.tensors[i])
    }

    pub(crate) fn conv_mut(&mut self, layer: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
        let (w, b) = self.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }
}

/// All learnable weights of fCNN, mCNN and the fully connected head, plus
/// the SGD velocity. Both branches of a pair read the same instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub config: NetConfig,
    pub pooling: PoolingMode,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub mcnn: ConvLayer<T>,
    pub fc: FcLayer<T>,
    pub velocity: Gradients<T>,
}

/// Glorot-uniform half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: NetConfig, pooling: PoolingMode) -> Result<Self> {
        let chain = config.shape_chain()?;
        let k = KERNEL_SIZE;
        let conv1 = ConvLayer::zeros(config.conv1_channels, INPUT_CHANNELS, k);
        let conv2 = ConvLayer::zeros(config.conv2_channels, config.conv1_channels, k);
        let mcnn = ConvLayer::zeros(config.mcnn_channels, config.conv2_channels, k);
        let fc = FcLayer::zeros(FC_OUTPUTS, chain.flatten);
        let mut p = ModelParams {
            config,
            pooling,
            conv1,
            conv2,
            mcnn,
            fc,
            velocity: Gradients { tensors: Vec::new() },
        };
        p.velocity = p.zero_grads();
        Ok(p)
    }

    /// Weights uniform in the Glorot bound of their layer, biases zero,
    /// velocity zero. Deterministic in `seed`.
    pub fn init(config: NetConfig, pooling: PoolingMode, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config, pooling)?;
        let mut rng = substream(seed, Stream::Init, 0);
        for (name, t) in PARAM_NAMES.iter().zip(p.tensors_mut()) {
            if name.ends_with(".bias") {
                continue;
            }
            let (fan_in, fan_out) = match *t.shape() {
                [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
                [o, i] => (i, o),
                _ => unreachable!("weights are rank 2 or 4"),
            };
            let bound = glorot_bound(fan_in, fan_out);
            for v in t.data_mut() {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.mcnn.weights,
            &self.mcnn.bias,
            &self.fc.weights,
            &self.fc.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.mcnn.weights,
            &mut self.mcnn.bias,
            &mut self.fc.weights,
            &mut self.fc.bias,
        ]
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            tensors: self.tensors().iter().map(|t| Tensor::zeros_like(t)).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite()) && self.velocity.all_finite()
    }

    /// Applies one SGD update to every tensor. The step is all-or-nothing:
    /// any non-finite gradient entry rejects it before anything changes.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: f64, momentum: f64) -> Result<()> {
        check_hyperparameters(lr, momentum)?;
        if grads.tensors.len() != PARAM_NAMES.len() {
            return Err(GaitError::shape("sgd_step", PARAM_NAMES.len(), grads.tensors.len()));
        }
        for (name, (g, p)) in PARAM_NAMES.iter().zip(grads.tensors.iter().zip(self.tensors())) {
            if g.shape() != p.shape() {
                return Err(GaitError::shape("sgd_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(GaitError::NonFinite(format!("gradient of {name}; SGD step rejected")));
            }
        }
        let mut velocity = std::mem::replace(&mut self.velocity, Gradients { tensors: Vec::new() });
        let result = self
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors.iter_mut())
            .zip(&grads.tensors)
            .try_for_each(|((p, v), g)| sgd_update(p, v, g, lr, momentum));
        self.velocity = velocity;
        result
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |c: &ConvLayer<T>| ConvLayer {
            weights: c.weights.cast(),
            bias: c.bias.cast(),
        };
        ModelParams {
            config: self.config,
            pooling: self.pooling,
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            mcnn: conv(&self.mcnn),
            fc: FcLayer {
                weights: self.fc.weights.cast(),
                bias: self.fc.bias.cast(),
            },
            velocity: Gradients {
                tensors: self.velocity.tensors.iter().map(Tensor::cast).collect(),
            },
        }
    }
}
