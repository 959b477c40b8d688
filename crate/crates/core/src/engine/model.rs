use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Weights of one decoder block.
///
/// Projections are stored `[in, out]` so activations multiply on the left.
/// `head_ids` / `ffn_ids` hold the parent-model indices of the modules that
/// are still present, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f32>,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
    pub head_ids: Vec<u32>,
    pub ffn_ids: Vec<u32>,
}

impl LayerWeights {
    #[inline]
    pub fn n_heads(&self) -> usize {
        self.head_ids.len()
    }

    #[inline]
    pub fn ffn_width(&self) -> usize {
        self.ffn_ids.len()
    }

    fn tensors(&self) -> [(&'static str, &[f32]); 9] {
        [
            ("attn_norm", &self.attn_norm),
            ("wq", self.wq.as_slice()),
            ("wk", self.wk.as_slice()),
            ("wv", self.wv.as_slice()),
            ("wo", self.wo.as_slice()),
            ("ffn_norm", &self.ffn_norm),
            ("w_gate", self.w_gate.as_slice()),
            ("w_up", self.w_up.as_slice()),
            ("w_down", self.w_down.as_slice()),
        ]
    }

    fn validate(&self, layer: usize, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.d_model;
        let h = self.n_heads();
        let f = self.ffn_width();
        if h == 0 || f == 0 {
            return Err(Error::Structural(format!(
                "layer {layer} must keep at least one head and one FFN dim"
            )));
        }
        check_ids(layer, "head", &self.head_ids, cfg.n_heads)?;
        check_ids(layer, "ffn", &self.ffn_ids, cfg.ffn_dim)?;
        let a = h * cfg.head_dim;
        let expect = [
            ("attn_norm", (1, d), (1, self.attn_norm.len())),
            ("wq", (d, a), self.wq.shape()),
            ("wk", (d, a), self.wk.shape()),
            ("wv", (d, a), self.wv.shape()),
            ("wo", (a, d), self.wo.shape()),
            ("ffn_norm", (1, d), (1, self.ffn_norm.len())),
            ("w_gate", (d, f), self.w_gate.shape()),
            ("w_up", (d, f), self.w_up.shape()),
            ("w_down", (f, d), self.w_down.shape()),
        ];
        for (name, want, got) in expect {
            if want != got {
                return Err(Error::input(format!(
                    "layer {layer} {name}: expected shape {want:?}, found {got:?}"
                )));
            }
        }
        for (name, data) in self.tensors() {
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(
                    Some(layer),
                    format!("tensor {name} holds a non-finite value"),
                ));
            }
        }
        Ok(())
    }

    /// Prunable parameter count of this layer.
    pub fn prunable_params(&self) -> u64 {
        (self.wq.as_slice().len()
            + self.wk.as_slice().len()
            + self.wv.as_slice().len()
            + self.wo.as_slice().len()
            + self.w_gate.as_slice().len()
            + self.w_up.as_slice().len()
            + self.w_down.as_slice().len()) as u64
    }
}

fn check_ids(layer: usize, what: &str, ids: &[u32], bound: usize) -> Result<()> {
    if ids.windows(2).any(|w| w[0] >= w[1]) || ids.iter().any(|&i| i as usize >= bound) {
        return Err(Error::input(format!(
            "layer {layer}: {what} ids must be strictly increasing and below {bound}"
        )));
    }
    Ok(())
}

/// Transformer weights plus architecture config. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: ModelConfig,
    embedding: Matrix,
    final_norm: Vec<f32>,
    layers: Vec<LayerWeights>,
}

impl ModelBundle {
    pub fn from_parts(
        config: ModelConfig,
        embedding: Matrix,
        final_norm: Vec<f32>,
        layers: Vec<LayerWeights>,
    ) -> Result<Self> {
        config.validate()?;
        if embedding.shape() != (config.vocab_size, config.d_model) {
            return Err(Error::input(format!(
                "embedding: expected shape {:?}, found {:?}",
                (config.vocab_size, config.d_model),
                embedding.shape()
            )));
        }
        if final_norm.len() != config.d_model {
            return Err(Error::input(format!(
                "final_norm: expected {} entries, found {}",
                config.d_model,
                final_norm.len()
            )));
        }
        if layers.len() != config.n_layers {
            return Err(Error::input(format!(
                "expected {} layers, found {}",
                config.n_layers,
                layers.len()
            )));
        }
        if !embedding.is_finite() || !final_norm.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(None, "embedding or final norm is non-finite"));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i, &config)?;
        }
        Ok(Self {
            config,
            embedding,
            final_norm,
            layers,
        })
    }

    pub fn into_parts(self) -> (ModelConfig, Matrix, Vec<f32>, Vec<LayerWeights>) {
        (self.config, self.embedding, self.final_norm, self.layers)
    }

    /// Random model with uniform weights of standard deviation `scale / sqrt(fan_in)`.
    pub fn random(config: ModelConfig, seed: u64, scale: f32) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize, fan_in: usize| {
            let bound = scale * libm::sqrtf(3.0 / fan_in as f32);
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
        };
        let d = config.d_model;
        let f = config.ffn_dim;
        let embedding = init(config.vocab_size, d, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: init(d, d, d),
                wk: init(d, d, d),
                wv: init(d, d, d),
                wo: init(d, d, d),
                ffn_norm: vec![1.0; d],
                w_gate: init(d, f, d),
                w_up: init(d, f, d),
                w_down: init(f, d, f),
                head_ids: (0..config.n_heads as u32).collect(),
                ffn_ids: (0..config.ffn_dim as u32).collect(),
            })
            .collect();
        Self::from_parts(config, embedding, vec![1.0; d], layers)
    }

    /// All projection and embedding weights zero, norms one.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.ffn_dim;
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: Matrix::zeros(d, d),
                wk: Matrix::zeros(d, d),
                wv: Matrix::zeros(d, d),
                wo: Matrix::zeros(d, d),
                ffn_norm: vec![1.0; d],
                w_gate: Matrix::zeros(d, f),
                w_up: Matrix::zeros(d, f),
                w_down: Matrix::zeros(f, d),
                head_ids: (0..config.n_heads as u32).collect(),
                ffn_ids: (0..config.ffn_dim as u32).collect(),
            })
            .collect();
        Self::from_parts(config, Matrix::zeros(config.vocab_size, d), vec![1.0; d], layers)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn final_norm(&self) -> &[f32] {
        &self.final_norm
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Number of live modules (heads plus FFN dims) across all layers.
    pub fn live_module_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_heads() + l.ffn_width()).sum()
    }

    pub fn prunable_params(&self) -> u64 {
        self.layers.iter().map(LayerWeights::prunable_params).sum()
    }

    /// Every parameter, including embedding and norm scales.
    pub fn total_params(&self) -> u64 {
        let norms: usize = self
            .layers
            .iter()
            .map(|l| l.attn_norm.len() + l.ffn_norm.len())
            .sum();
        self.prunable_params()
            + (self.embedding.as_slice().len() + self.final_norm.len() + norms) as u64
    }
}
