use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Slices per stack.
    pub k: usize,
    /// Volume shape `(D, H, W)`; stacks are `(K, H, W)`.
    pub volume_shape: [usize; 3],
    /// Scorer embedding width.
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Width of the scorer feed-forward sub-layer.
    pub ffn_dim: usize,
    pub with_attention: bool,
    /// Channels of the four ResNet-10 stages.
    pub encoder_widths: [usize; 4],
    pub regressor_blocks: usize,
    /// Bottleneck width of each ResNeXt block.
    pub regressor_width: usize,
    pub cardinality: usize,
    /// In-plane kernel of the `K → D` slice convolution.
    pub slice_kernel: usize,
}

impl ModelConfig {
    /// 24×32×32 volumes, six slices per stack.
    pub fn desk() -> Self {
        Self {
            k: 6,
            volume_shape: [24, 32, 32],
            hidden_dim: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 256,
            with_attention: true,
            encoder_widths: [16, 32, 64, 128],
            regressor_blocks: 3,
            regressor_width: 128,
            cardinality: 32,
            slice_kernel: 3,
        }
    }

    /// 70×100×100 volumes, six slices per stack.
    pub fn paper() -> Self {
        Self {
            k: 6,
            volume_shape: [70, 100, 100],
            hidden_dim: 256,
            heads: 8,
            layers: 2,
            ffn_dim: 8192,
            with_attention: true,
            encoder_widths: [20, 40, 80, 160],
            regressor_blocks: 3,
            regressor_width: 128,
            cardinality: 32,
            slice_kernel: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(SvrError::invalid(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }

    pub fn with_attention(mut self, on: bool) -> Self {
        self.with_attention = on;
        self
    }

    pub fn depth(&self) -> usize {
        self.volume_shape[0]
    }

    pub fn stack_shape(&self) -> [usize; 3] {
        [self.k, self.volume_shape[1], self.volume_shape[2]]
    }

    /// Tokens per stack (one per slice row).
    pub fn tokens(&self) -> usize {
        self.k * self.volume_shape[1]
    }

    pub fn fused_channels(&self) -> usize {
        2 * self.encoder_widths[3]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SvrError::invalid(m));
        if self.k == 0 || self.volume_shape.iter().any(|&n| n == 0) {
            return bad(format!("empty stack or volume shape: k = {}, volume {:?}", self.k, self.volume_shape));
        }
        if self.with_attention {
            if self.heads == 0 || self.hidden_dim % self.heads != 0 {
                return bad(format!("hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.heads));
            }
            if self.layers == 0 || self.ffn_dim == 0 {
                return bad("the scorer needs at least one layer and a non-empty feed-forward width".into());
            }
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return bad("encoder widths must be positive".into());
        }
        if self.cardinality == 0 || self.regressor_width % self.cardinality != 0 {
            return bad(format!(
                "regressor width {} is not divisible by cardinality {}",
                self.regressor_width, self.cardinality
            ));
        }
        if self.slice_kernel % 2 == 0 {
            return bad(format!("slice kernel must be odd, got {}", self.slice_kernel));
        }
        Ok(())
    }

    /// Spatial dims after the stem and each of the four stride-2 stages.
    pub fn stage_dims(&self) -> [[usize; 3]; 5] {
        let mut out = [self.volume_shape; 5];
        for s in 1..5 {
            out[s] = out[s - 1].map(|n| (n - 1) / 2 + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
        assert!(ModelConfig::preset("laptop").is_err());
        let mut c = ModelConfig::desk();
        c.heads = 5;
        assert!(c.validate().is_err());
        c.with_attention = false;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn stride_schedule() {
        assert_eq!(ModelConfig::desk().stage_dims()[4], [2, 2, 2]);
        assert_eq!(ModelConfig::paper().stage_dims(), [[70, 100, 100], [35, 50, 50], [18, 25, 25], [9, 13, 13], [5, 7, 7]]);
    }
}
