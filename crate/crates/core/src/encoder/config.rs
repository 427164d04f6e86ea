use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Dimensions and fixed hyperparameters of the toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_rope_train")]
    pub rope_base_train: f64,
    #[serde(default = "default_rope_infer")]
    pub rope_base_infer: f64,
    #[serde(default = "default_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_alpha")]
    pub lora_alpha: f64,
    pub mrl_dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rope_train() -> f64 {
    10_000.0
}
fn default_rope_infer() -> f64 {
    20_000.0
}
fn default_rank() -> usize {
    4
}
fn default_alpha() -> f64 {
    4.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            max_seq_len: 128,
            rope_base_train: default_rope_train(),
            rope_base_infer: default_rope_infer(),
            lora_rank: default_rank(),
            lora_alpha: default_alpha(),
            mrl_dims: vec![4, 8, 16, 32],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |msg: String| Err(EncoderError::Config(msg));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("vocab_size, d_model, n_layers and d_ff must be positive".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(EncoderError::OddHeadDim(self.head_dim()));
        }
        if self.lora_rank == 0 {
            return bad("lora_rank must be at least 1".into());
        }
        if !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return bad("lora_alpha must be positive".into());
        }
        for base in [self.rope_base_train, self.rope_base_infer] {
            if !(base.is_finite() && base > 0.0) {
                return bad(format!("rope base {base} must be positive"));
            }
        }
        if self.mrl_dims.is_empty()
            || self.mrl_dims.windows(2).any(|w| w[0] >= w[1])
            || self.mrl_dims[0] == 0
            || *self.mrl_dims.last().unwrap() != self.d_model
        {
            return bad(format!(
                "mrl_dims {:?} must be strictly ascending in [1, {}] and end at d_model",
                self.mrl_dims, self.d_model
            ));
        }
        Ok(())
    }
}
