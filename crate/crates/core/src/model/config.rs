// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of the decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub norm_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 512,
            max_seq: 64,
            norm_epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.norm_epsilon.is_finite() && self.norm_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "norm_epsilon must be a positive finite number, got {}",
                self.norm_epsilon
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every tensor the architecture reads, in canonical manifest order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let (d, v) = (self.d_model, self.vocab_size);
        let mut specs = vec![
            ("token_embedding".to_owned(), vec![v, d]),
            ("position_embedding".to_owned(), vec![self.max_seq, d]),
        ];
        for b in 0..self.n_layers {
            specs.push((format!("blocks.{b}.attn_norm"), vec![d]));
            specs.push((format!("blocks.{b}.wq"), vec![d, d]));
            specs.push((format!("blocks.{b}.wk"), vec![d, d]));
            specs.push((format!("blocks.{b}.wv"), vec![d, d]));
            specs.push((format!("blocks.{b}.wo"), vec![d, d]));
            specs.push((format!("blocks.{b}.ffn_norm"), vec![d]));
            specs.push((format!("blocks.{b}.w_in"), vec![d, self.d_ff]));
            specs.push((format!("blocks.{b}.w_out"), vec![self.d_ff, d]));
        }
        specs.push(("final_norm".to_owned(), vec![d]));
        specs.push(("unembedding".to_owned(), vec![d, v]));
        specs
    }
}

/// Norm gains start at one; everything else is drawn from a scaled normal.
pub(crate) fn is_norm_gain(name: &str) -> bool {
    name.ends_with("_norm")
}
