use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::layers::LrnParams;

/// Every convolution in the network uses 7x7 filters at stride 1.
pub const KERNEL_SIZE: usize = 7;
/// Silhouette plus signed frame difference.
pub const INPUT_CHANNELS: usize = 2;
pub const FC_OUTPUTS: usize = 2;
/// Logit / probability index meaning "different identity" (`t0`, `p0`).
pub const DIFF_INDEX: usize = 0;
/// Logit / probability index meaning "same identity" (`t1`, `p1`).
pub const SAME_INDEX: usize = 1;

/// Layer widths and input resolution. The layer sequence is fixed:
/// fCNN = conv-relu-pool-lrn-conv-relu-pool-lrn, comparator = |a-b|,
/// conv-relu, flatten, one affine layer, softmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub mcnn_channels: usize,
    pub lrn: LrnParams,
}

/// Activation shapes through one fCNN branch and the comparator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeChain {
    pub input: [usize; 3],
    pub conv1: [usize; 3],
    pub pool1: [usize; 3],
    pub conv2: [usize; 3],
    pub feature: [usize; 3],
    pub mcnn: [usize; 3],
    pub flatten: usize,
    pub logits: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::tiny()
    }
}

impl NetConfig {
    /// 126x126 input, 16 / 64 / 256 filters.
    pub fn paper() -> Self {
        NetConfig {
            input_size: 126,
            conv1_channels: 16,
            conv2_channels: 64,
            mcnn_channels: 256,
            lrn: LrnParams::default(),
        }
    }

    /// Desk-scale clone used for synthetic training runs.
    pub fn tiny() -> Self {
        NetConfig {
            input_size: 46,
            conv1_channels: 16,
            conv2_channels: 32,
            mcnn_channels: 16,
            lrn: LrnParams::default(),
        }
    }

    /// Smallest input that keeps every layer (46 -> 40 -> 20 -> 14 -> 7 -> 1),
    /// two filters per convolution. Cheap enough for whole-network finite
    /// differences.
    pub fn gradcheck() -> Self {
        NetConfig {
            input_size: 46,
            conv1_channels: 2,
            conv2_channels: 2,
            mcnn_channels: 2,
            lrn: LrnParams::default(),
        }
    }

    pub fn shape_chain(&self) -> Result<ShapeChain> {
        self.lrn.validate()?;
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.mcnn_channels == 0 {
            return Err(GaitError::invalid("layer widths must be positive"));
        }
        let conv = |s: usize, what: &str| -> Result<usize> {
            s.checked_sub(KERNEL_SIZE - 1)
                .filter(|&o| o > 0)
                .ok_or_else(|| GaitError::invalid(format!("{what}: extent {s} smaller than the 7x7 kernel")))
        };
        let pool = |s: usize, what: &str| -> Result<usize> {
            if s % 2 == 0 {
                Ok(s / 2)
            } else {
                Err(GaitError::invalid(format!("{what}: odd extent {s} cannot be 2x2 pooled")))
            }
        };
        let s = self.input_size;
        let c1 = conv(s, "conv1")?;
        let p1 = pool(c1, "pool1")?;
        let c2 = conv(p1, "conv2")?;
        let p2 = pool(c2, "pool2")?;
        let m = conv(p2, "mcnn")?;
        Ok(ShapeChain {
            input: [INPUT_CHANNELS, s, s],
            conv1: [self.conv1_channels, c1, c1],
            pool1: [self.conv1_channels, p1, p1],
            conv2: [self.conv2_channels, c2, c2],
            feature: [self.conv2_channels, p2, p2],
            mcnn: [self.mcnn_channels, m, m],
            flatten: self.mcnn_channels * m * m,
            logits: FC_OUTPUTS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_chain().map(|_| ())
    }

    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        Ok(self.shape_chain()?.feature)
    }
}
