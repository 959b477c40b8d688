use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::{LayerWeights, ModelBundle};
use super::trace::{ActivationTrace, AxisStats, LayerTrace};
use crate::catalog::SubModelMask;
use crate::error::{Error, Result};
use crate::kernels::{matmul, matmul_bt, rms_norm, rotary_embed, silu_gate, softmax_in_place};
use crate::tensor::Matrix;

pub const RMS_EPS: f32 = 1e-6;

/// Per-layer keep bits derived from a catalog-ordered mask.
struct LayerKeep<'a> {
    heads: Option<&'a [bool]>,
    ffn: Option<&'a [bool]>,
}

fn split_mask<'a>(model: &ModelBundle, mask: Option<&'a SubModelMask>) -> Result<Vec<LayerKeep<'a>>> {
    let Some(mask) = mask else {
        return Ok(model
            .layers()
            .iter()
            .map(|_| LayerKeep {
                heads: None,
                ffn: None,
            })
            .collect());
    };
    let expected = model.live_module_count();
    if mask.len() != expected {
        return Err(Error::input(format!(
            "mask covers {} modules, model has {expected} live modules",
            mask.len()
        )));
    }
    let bits = mask.bits();
    let mut offset = 0;
    let mut out = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let h = layer.n_heads();
        let f = layer.ffn_width();
        out.push(LayerKeep {
            heads: Some(&bits[offset..offset + h]),
            ffn: Some(&bits[offset + h..offset + h + f]),
        });
        offset += h + f;
    }
    Ok(out)
}

/// Full-sequence forward pass returning `seq_len × vocab` logits.
///
/// Masked heads are zeroed before the O-projection and masked FFN dims
/// are zeroed before the down-projection.
pub fn forward(model: &ModelBundle, tokens: &[u32], mask: Option<&SubModelMask>) -> Result<Matrix> {
    forward_impl(model, tokens, mask, None)
}

/// Like [`forward`] but folds pre-projection activations into `trace`.
pub fn forward_traced(
    model: &ModelBundle,
    tokens: &[u32],
    mask: Option<&SubModelMask>,
    trace: &mut ActivationTrace,
) -> Result<Matrix> {
    if trace.layers.is_empty() {
        trace.layers = model
            .layers()
            .iter()
            .map(|l| LayerTrace {
                attention: AxisStats::new(l.n_heads()),
                ffn: AxisStats::new(l.ffn_width()),
            })
            .collect();
    } else if trace.layers.len() != model.layers().len()
        || trace
            .layers
            .iter()
            .zip(model.layers())
            .any(|(t, l)| t.attention.modules() != l.n_heads() || t.ffn.modules() != l.ffn_width())
    {
        return Err(Error::input("activation trace does not match model shape"));
    }
    let logits = forward_impl(model, tokens, mask, Some(trace))?;
    trace.sequences += 1;
    trace.positions += tokens.len() as u64;
    Ok(logits)
}

fn forward_impl(
    model: &ModelBundle,
    tokens: &[u32],
    mask: Option<&SubModelMask>,
    mut trace: Option<&mut ActivationTrace>,
) -> Result<Matrix> {
    let cfg = model.config();
    if tokens.is_empty() {
        return Err(Error::input("empty token sequence"));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::input(format!(
            "sequence of {} tokens exceeds max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::input(format!(
            "token id {bad} out of range for vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let keeps = split_mask(model, mask)?;

    let emb = model.embedding();
    let mut hidden = Matrix::from_fn(tokens.len(), cfg.d_model, |t, c| emb.get(tokens[t] as usize, c));

    for (idx, (layer, keep)) in model.layers().iter().zip(&keeps).enumerate() {
        let lt = trace.as_deref_mut().map(|t| &mut t.layers[idx]);
        layer_forward(layer, keep, cfg.head_dim, cfg.rope_base, &mut hidden, lt)?;
        if !hidden.is_finite() {
            return Err(Error::numeric(Some(idx), "non-finite residual stream"));
        }
    }

    let normed = rms_norm(&hidden, model.final_norm(), RMS_EPS)?;
    let logits = matmul_bt(&normed, emb)?;
    if !logits.is_finite() {
        return Err(Error::numeric(None, "non-finite logits"));
    }
    Ok(logits)
}

fn layer_forward(
    layer: &LayerWeights,
    keep: &LayerKeep<'_>,
    head_dim: usize,
    rope_base: f32,
    hidden: &mut Matrix,
    mut trace: Option<&mut LayerTrace>,
) -> Result<()> {
    let seq = hidden.rows();
    let n_heads = layer.n_heads();

    let x = rms_norm(hidden, &layer.attn_norm, RMS_EPS)?;
    let mut q = matmul(&x, &layer.wq)?;
    let mut k = matmul(&x, &layer.wk)?;
    let v = matmul(&x, &layer.wv)?;
    rotary_embed(&mut q, head_dim, rope_base)?;
    rotary_embed(&mut k, head_dim, rope_base)?;

    let scale = 1.0 / libm::sqrtf(head_dim as f32);
    let mut attn = Matrix::zeros(seq, n_heads * head_dim);
    let mut probs = vec![0.0f32; seq];
    for h in 0..n_heads {
        if keep.heads.is_some_and(|bits| !bits[h]) {
            continue;
        }
        let cols = h * head_dim..(h + 1) * head_dim;
        for t in 0..seq {
            let qt = &q.row(t)[cols.clone()];
            let scores = &mut probs[..=t];
            for (s, score) in scores.iter_mut().enumerate() {
                let ks = &k.row(s)[cols.clone()];
                *score = qt.iter().zip(ks).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            softmax_in_place(scores);
            let out = &mut attn.row_mut(t)[cols.clone()];
            for (s, &p) in scores.iter().enumerate() {
                let vs = &v.row(s)[cols.clone()];
                for (o, &vv) in out.iter_mut().zip(vs) {
                    *o += p * vv;
                }
            }
        }
    }
    if let Some(t) = trace.as_deref_mut() {
        t.attention.observe(attn.as_slice(), head_dim)?;
    }
    let o = matmul(&attn, &layer.wo)?;
    add_in_place(hidden, &o);

    let x = rms_norm(hidden, &layer.ffn_norm, RMS_EPS)?;
    let gate = matmul(&x, &layer.w_gate)?;
    let up = matmul(&x, &layer.w_up)?;
    let mut act = silu_gate(&gate, &up)?;
    if let Some(bits) = keep.ffn {
        let width = act.cols();
        for t in 0..seq {
            let row = act.row_mut(t);
            for (j, v) in row.iter_mut().enumerate().take(width) {
                if !bits[j] {
                    *v = 0.0;
                }
            }
        }
    }
    if let Some(t) = trace {
        t.ffn.observe(act.as_slice(), 1)?;
    }
    let down = matmul(&act, &layer.w_down)?;
    add_in_place(hidden, &down);
    Ok(())
}

fn add_in_place(acc: &mut Matrix, other: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += b;
    }
}
