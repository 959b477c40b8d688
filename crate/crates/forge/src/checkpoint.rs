//! Single-file checkpoint: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f32`.
//!
//! The header lists each tensor's name, shape and byte offset into the data
//! section. Shapes are checked against the config and the per-layer module
//! ids before any buffer is read.

use std::fs;
use std::path::Path;

use bonsai_core::engine::{LayerWeights, ModelBundle, ModelConfig};
use bonsai_core::tensor::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const MAGIC: &[u8; 8] = b"BONSAIW1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    layers: Vec<LayerIds>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerIds {
    head_ids: Vec<u32>,
    ffn_ids: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Tensors in file order with their expected shapes.
fn layout(config: &ModelConfig, layers: &[LayerIds]) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("embedding".to_string(), vec![config.vocab_size, d]),
        ("final_norm".to_string(), vec![d]),
    ];
    for (i, ids) in layers.iter().enumerate() {
        let hw = ids.head_ids.len() * config.head_dim;
        let f = ids.ffn_ids.len();
        for (name, shape) in [
            ("attn_norm", vec![d]),
            ("wq", vec![d, hw]),
            ("wk", vec![d, hw]),
            ("wv", vec![d, hw]),
            ("wo", vec![hw, d]),
            ("ffn_norm", vec![d]),
            ("w_gate", vec![d, f]),
            ("w_up", vec![d, f]),
            ("w_down", vec![f, d]),
        ] {
            out.push((format!("layers.{i}.{name}"), shape));
        }
    }
    out
}

fn layer_tensors(l: &LayerWeights) -> [&[f32]; 9] {
    [
        &l.attn_norm,
        l.wq.as_slice(),
        l.wk.as_slice(),
        l.wv.as_slice(),
        l.wo.as_slice(),
        &l.ffn_norm,
        l.w_gate.as_slice(),
        l.w_up.as_slice(),
        l.w_down.as_slice(),
    ]
}

pub fn to_bytes(model: &ModelBundle) -> Vec<u8> {
    let layers: Vec<LayerIds> = model
        .layers()
        .iter()
        .map(|l| LayerIds { head_ids: l.head_ids.clone(), ffn_ids: l.ffn_ids.clone() })
        .collect();
    let mut buffers: Vec<&[f32]> = vec![model.embedding().as_slice(), model.final_norm()];
    for l in model.layers() {
        buffers.extend(layer_tensors(l));
    }
    let mut offset = 0u64;
    let tensors = layout(model.config(), &layers)
        .into_iter()
        .zip(&buffers)
        .map(|((name, shape), buf)| {
            let entry = TensorEntry { name, shape, offset };
            offset += 4 * buf.len() as u64;
            entry
        })
        .collect();
    let header = Header { config: *model.config(), layers, tensors };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for buf in buffers {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ForgeError::format("not a checkpoint (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let data_start = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| ForgeError::format("checkpoint truncated inside the header"))? as usize;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| ForgeError::format(format!("checkpoint header: {e}")))?;
    let config = &header.config;
    config
        .validate()
        .map_err(|e| ForgeError::format(format!("checkpoint config: {e}")))?;
    if header.layers.len() != config.n_layers {
        return Err(ForgeError::format(format!(
            "header lists {} layers, config has {}",
            header.layers.len(),
            config.n_layers
        )));
    }

    let expected = layout(config, &header.layers);
    if header.tensors.len() != expected.len() {
        return Err(ForgeError::format(format!(
            "header lists {} tensors, expected {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let data = &bytes[data_start..];
    let mut next = 0u64;
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name {
            return Err(ForgeError::format(format!("expected tensor {name}, found {}", entry.name)));
        }
        if &entry.shape != shape {
            return Err(ForgeError::format(format!(
                "tensor {name}: header shape {:?} does not match config shape {shape:?}",
                entry.shape
            )));
        }
        if entry.offset != next {
            return Err(ForgeError::format(format!("tensor {name}: offset {} is not contiguous", entry.offset)));
        }
        let len = 4 * shape.iter().product::<usize>() as u64;
        let end = next + len;
        if end > data.len() as u64 {
            return Err(ForgeError::format(format!(
                "tensor {name}: needs bytes {next}..{end} but the data section holds {}",
                data.len()
            )));
        }
        let raw = &data[next as usize..end as usize];
        values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        next = end;
    }
    if next != data.len() as u64 {
        return Err(ForgeError::format(format!(
            "{} trailing bytes after the last tensor",
            data.len() as u64 - next
        )));
    }

    let mut it = values.into_iter().zip(expected.into_iter().map(|(_, shape)| shape));
    let embedding = next_matrix(&mut it)?;
    let final_norm = next_vector(&mut it);
    let mut layers = Vec::with_capacity(config.n_layers);
    for ids in header.layers {
        layers.push(LayerWeights {
            attn_norm: next_vector(&mut it),
            wq: next_matrix(&mut it)?,
            wk: next_matrix(&mut it)?,
            wv: next_matrix(&mut it)?,
            wo: next_matrix(&mut it)?,
            ffn_norm: next_vector(&mut it),
            w_gate: next_matrix(&mut it)?,
            w_up: next_matrix(&mut it)?,
            w_down: next_matrix(&mut it)?,
            head_ids: ids.head_ids,
            ffn_ids: ids.ffn_ids,
        });
    }
    ModelBundle::from_parts(header.config, embedding, final_norm, layers).map_err(|e| match e {
        bonsai_core::Error::Numeric { .. } => e.into(),
        other => ForgeError::format(format!("checkpoint contents: {other}")),
    })
}

fn next_vector(it: &mut impl Iterator<Item = (Vec<f32>, Vec<usize>)>) -> Vec<f32> {
    it.next().expect("one buffer per tensor").0
}

fn next_matrix(it: &mut impl Iterator<Item = (Vec<f32>, Vec<usize>)>) -> Result<Matrix> {
    let (v, shape) = it.next().expect("one buffer per tensor");
    Ok(Matrix::new(shape[0], shape[1], v)?)
}

pub fn save_checkpoint(model: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| ForgeError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    from_bytes(&bytes)
}
