use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture constants of a decoder-only transformer.
///
/// `n_heads` and `ffn_dim` describe the unpruned parent; a sliced model keeps
/// the same config and records its surviving modules per layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Rotary position frequency base.
    pub rope_base: f32,
}

impl ModelConfig {
    /// 2 layers, 2 heads of width 4, 16 FFN dims, 32-token vocabulary.
    pub fn tiny() -> Self {
        Self {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            head_dim: 4,
            ffn_dim: 16,
            vocab_size: 32,
            max_seq_len: 64,
            rope_base: 10_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::input(format!("{name} must be at least 1")));
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(Error::input(format!(
                "n_heads ({}) x head_dim ({}) must equal d_model ({})",
                self.n_heads, self.head_dim, self.d_model
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::input("rope_base must be a positive finite number"));
        }
        Ok(())
    }

    /// Parameters held by one attention head (Q/K/V columns plus O rows).
    pub fn head_size(&self) -> u64 {
        4 * (self.d_model * self.head_dim) as u64
    }

    /// Parameters held by one FFN intermediate dimension (gate, up, down).
    pub fn ffn_dim_size(&self) -> u64 {
        3 * self.d_model as u64
    }
}
