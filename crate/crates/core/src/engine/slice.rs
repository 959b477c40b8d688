use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use super::model::{LayerWeights, ModelBundle};
use crate::catalog::{ModuleCatalog, ModuleId, ModuleKind, SubModelMask};
use crate::error::{Error, Result};

/// Physically removes every live module not in `keep`.
///
/// Dropped heads lose their Q/K/V columns and O rows; dropped FFN dims lose
/// their gate/up columns and down rows.
pub fn slice(model: &ModelBundle, keep: &BTreeSet<ModuleId>) -> Result<ModelBundle> {
    let catalog = ModuleCatalog::of_model(model);
    if let Some(stray) = keep.iter().find(|id| catalog.position(id).is_none()) {
        return Err(Error::input(format!("module {stray} is not live in this model")));
    }
    let cfg = *model.config();
    let hd = cfg.head_dim;
    let (config, embedding, final_norm, layers) = model.clone().into_parts();
    let mut out = Vec::with_capacity(layers.len());
    for (l, layer) in layers.into_iter().enumerate() {
        let id = |kind, index| ModuleId {
            layer: l as u32,
            kind,
            index,
        };
        let heads: Vec<usize> = (0..layer.n_heads())
            .filter(|&h| keep.contains(&id(ModuleKind::Head, layer.head_ids[h])))
            .collect();
        let ffn: Vec<usize> = (0..layer.ffn_width())
            .filter(|&j| keep.contains(&id(ModuleKind::Ffn, layer.ffn_ids[j])))
            .collect();
        if heads.is_empty() || ffn.is_empty() {
            return Err(Error::Structural(format!(
                "keep-set leaves layer {l} with {} heads and {} FFN dims; each layer needs at least one of both",
                heads.len(),
                ffn.len()
            )));
        }
        let attn_cols: Vec<usize> = heads
            .iter()
            .flat_map(|&h| h * hd..(h + 1) * hd)
            .collect();
        out.push(LayerWeights {
            wq: layer.wq.select_cols(&attn_cols),
            wk: layer.wk.select_cols(&attn_cols),
            wv: layer.wv.select_cols(&attn_cols),
            wo: layer.wo.select_rows(&attn_cols),
            w_gate: layer.w_gate.select_cols(&ffn),
            w_up: layer.w_up.select_cols(&ffn),
            w_down: layer.w_down.select_rows(&ffn),
            head_ids: heads.iter().map(|&h| layer.head_ids[h]).collect(),
            ffn_ids: ffn.iter().map(|&j| layer.ffn_ids[j]).collect(),
            attn_norm: layer.attn_norm,
            ffn_norm: layer.ffn_norm,
        });
    }
    ModelBundle::from_parts(config, embedding, final_norm, out)
}

/// Slices away every module whose mask bit is zero.
pub fn slice_mask(model: &ModelBundle, mask: &SubModelMask) -> Result<ModelBundle> {
    let catalog = ModuleCatalog::of_model(model);
    if mask.len() != catalog.len() {
        return Err(Error::input(format!(
            "mask covers {} modules, model has {}",
            mask.len(),
            catalog.len()
        )));
    }
    let keep = catalog
        .ids()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &bit)| bit)
        .map(|(id, _)| *id)
        .collect();
    slice(model, &keep)
}
