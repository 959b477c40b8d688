//! Prunable module enumeration, parameter accounting, masks and budgets.
//!
//! Catalog order is layer-major with heads before FFN dims, and by parent
//! index within a kind. This is exactly the derived `Ord` of [`ModuleId`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::{ModelBundle, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Head,
    Ffn,
}

impl ModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Head => "head",
            ModuleKind::Ffn => "ffn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "head" => Some(ModuleKind::Head),
            "ffn" => Some(ModuleKind::Ffn),
            _ => None,
        }
    }
}

/// One attention head or one FFN intermediate dimension, addressed by its
/// index in the parent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId {
    pub layer: u32,
    pub kind: ModuleKind,
    pub index: u32,
}

impl ModuleId {
    pub fn head(layer: u32, index: u32) -> Self {
        Self {
            layer,
            kind: ModuleKind::Head,
            index,
        }
    }

    pub fn ffn(layer: u32, index: u32) -> Self {
        Self {
            layer,
            kind: ModuleKind::Ffn,
            index,
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.layer, self.kind.as_str(), self.index)
    }
}

/// Contiguous run of catalog positions sharing a (layer, kind).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleGroup {
    pub layer: u32,
    pub kind: ModuleKind,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleCatalog {
    ids: Vec<ModuleId>,
    sizes: Vec<u64>,
    groups: Vec<ModuleGroup>,
    total: u64,
}

impl ModuleCatalog {
    /// Full catalog of an unpruned model with this config.
    pub fn enumerate(config: &ModelConfig) -> Self {
        let mut ids = Vec::with_capacity(config.n_layers * (config.n_heads + config.ffn_dim));
        let mut sizes = Vec::with_capacity(ids.capacity());
        for l in 0..config.n_layers as u32 {
            for h in 0..config.n_heads as u32 {
                ids.push(ModuleId::head(l, h));
                sizes.push(config.head_size());
            }
            for j in 0..config.ffn_dim as u32 {
                ids.push(ModuleId::ffn(l, j));
                sizes.push(config.ffn_dim_size());
            }
        }
        Self::build(ids, sizes)
    }

    /// Catalog of the modules still present in `model`.
    pub fn of_model(model: &ModelBundle) -> Self {
        let cfg = model.config();
        let mut ids = Vec::with_capacity(model.live_module_count());
        let mut sizes = Vec::with_capacity(ids.capacity());
        for (l, layer) in model.layers().iter().enumerate() {
            for &h in &layer.head_ids {
                ids.push(ModuleId::head(l as u32, h));
                sizes.push(cfg.head_size());
            }
            for &j in &layer.ffn_ids {
                ids.push(ModuleId::ffn(l as u32, j));
                sizes.push(cfg.ffn_dim_size());
            }
        }
        Self::build(ids, sizes)
    }

    /// Catalog from explicit entries; ids must be strictly increasing and sizes positive.
    pub fn from_parts(ids: Vec<ModuleId>, sizes: Vec<u64>) -> Result<Self> {
        if ids.len() != sizes.len() {
            return Err(Error::input("catalog ids and sizes differ in length"));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("catalog ids must be strictly increasing"));
        }
        if sizes.contains(&0) {
            return Err(Error::input("module sizes must be positive"));
        }
        Ok(Self::build(ids, sizes))
    }

    fn build(ids: Vec<ModuleId>, sizes: Vec<u64>) -> Self {
        let mut groups: Vec<ModuleGroup> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.layer == id.layer && g.kind == id.kind => g.range.end = i + 1,
                _ => groups.push(ModuleGroup {
                    layer: id.layer,
                    kind: id.kind,
                    range: i..i + 1,
                }),
            }
        }
        let total = sizes.iter().sum();
        Self {
            ids,
            sizes,
            groups,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ModuleId] {
        &self.ids
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn groups(&self) -> &[ModuleGroup] {
        &self.groups
    }

    /// Total prunable parameter count (Σ sᵢ).
    pub fn total_size(&self) -> u64 {
        self.total
    }

    pub fn max_size(&self) -> u64 {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn position(&self, id: &ModuleId) -> Option<usize> {
        self.ids.binary_search(id).ok()
    }

    /// Largest kept parameter count allowed at sparsity `p`: `⌊(1−p)·D⌋`.
    pub fn budget(&self, p: f64) -> Result<u64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::input(format!("sparsity {p} outside [0, 1)")));
        }
        Ok(libm::floor((1.0 - p) * self.total as f64 + 1e-9) as u64)
    }

    /// Minimum kept mass that leaves every group non-empty.
    pub fn min_feasible(&self) -> u64 {
        self.groups
            .iter()
            .map(|g| self.sizes[g.range.clone()].iter().copied().min().unwrap_or(0))
            .sum()
    }

    pub fn mass_of(&self, positions: impl IntoIterator<Item = usize>) -> u64 {
        positions.into_iter().map(|i| self.sizes[i]).sum()
    }
}

/// Binary inclusion vector over a catalog (`true` = kept).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubModelMask {
    bits: Vec<bool>,
}

impl SubModelMask {
    pub fn full(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_kept(&self, position: usize) -> bool {
        self.bits[position]
    }

    pub fn set(&mut self, position: usize, keep: bool) {
        self.bits[position] = keep;
    }

    pub fn dropped_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }

    /// Σ sᵢ over dropped modules.
    pub fn dropped_mass(&self, catalog: &ModuleCatalog) -> u64 {
        catalog.mass_of(self.dropped_positions())
    }

    /// Flips every bit except the `fixed` positions, which must be kept.
    pub fn complement(&self, fixed: &[usize]) -> Result<Self> {
        let mut is_fixed = vec![false; self.bits.len()];
        for &f in fixed {
            if f >= self.bits.len() {
                return Err(Error::input(format!("fixed position {f} outside mask")));
            }
            if !self.bits[f] {
                return Err(Error::input(format!(
                    "fixed position {f} is dropped in the mask"
                )));
            }
            is_fixed[f] = true;
        }
        Ok(Self {
            bits: self
                .bits
                .iter()
                .zip(&is_fixed)
                .map(|(&b, &fx)| fx || !b)
                .collect(),
        })
    }

    /// `0`/`1` string, one character per module.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn parse_bit_string(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::input(format!("invalid mask character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }
}

impl Serialize for SubModelMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for SubModelMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse_bit_string(&s).map_err(serde::de::Error::custom)
    }
}

/// Complement of `mask` keeping the `fixed` modules, addressed by id.
pub fn mask_complement(
    catalog: &ModuleCatalog,
    mask: &SubModelMask,
    fixed: &BTreeSet<ModuleId>,
) -> Result<SubModelMask> {
    let positions = fixed
        .iter()
        .map(|id| {
            catalog
                .position(id)
                .ok_or_else(|| Error::input(format!("fixed module {id} not in catalog")))
        })
        .collect::<Result<Vec<_>>>()?;
    mask.complement(&positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModuleCatalog {
        ModuleCatalog::enumerate(&ModelConfig::tiny())
    }

    #[test]
    fn tiny_catalog_counts_and_sizes() {
        let c = tiny();
        assert_eq!(c.len(), 36);
        assert_eq!(c.sizes()[0], 128);
        assert_eq!(c.sizes()[2], 24);
        assert_eq!(c.total_size(), 1280);
        assert_eq!(c.groups().len(), 4);
        assert_eq!(c.groups()[1].range, 2..18);
    }

    #[test]
    fn ordering_is_layer_major_heads_first() {
        let c = tiny();
        let mut sorted = c.ids().to_vec();
        sorted.sort();
        assert_eq!(sorted, c.ids());
        assert_eq!(c.ids()[18], ModuleId::head(1, 0));
    }

    #[test]
    fn budgets() {
        let c = tiny();
        assert_eq!(c.budget(0.0).unwrap(), 1280);
        assert_eq!(c.budget(0.5).unwrap(), 640);
        assert_eq!(c.budget(0.35).unwrap(), 832);
        assert!(matches!(c.budget(1.0), Err(Error::Input(_))));
        assert!(matches!(c.budget(-0.1), Err(Error::Input(_))));
    }

    #[test]
    fn complement_example() {
        let bits = [1, 1, 0, 1, 0, 1].iter().map(|&b| b == 1).collect();
        let m = SubModelMask::from_bits(bits);
        let c = m.complement(&[0, 1]).unwrap();
        assert_eq!(c.to_bit_string(), "111010");
        assert_eq!(c.complement(&[0, 1]).unwrap(), m);
    }

    #[test]
    fn complement_rejects_dropped_fixed() {
        let m = SubModelMask::parse_bit_string("0110").unwrap();
        assert!(matches!(m.complement(&[0]), Err(Error::Input(_))));
    }

    #[test]
    fn complement_by_id() {
        let c = tiny();
        let mut m = SubModelMask::full(c.len());
        m.set(5, false);
        let fixed: BTreeSet<_> = [ModuleId::head(0, 0)].into_iter().collect();
        let comp = mask_complement(&c, &m, &fixed).unwrap();
        assert!(comp.is_kept(0));
        assert!(comp.is_kept(5));
        assert_eq!(comp.dropped_positions().count(), c.len() - 2);
    }

    #[test]
    fn dropped_mass_sums_sizes() {
        let c = tiny();
        let mut m = SubModelMask::full(c.len());
        m.set(0, false);
        m.set(3, false);
        assert_eq!(m.dropped_mass(&c), 128 + 24);
    }

    #[test]
    fn from_parts_validates() {
        let ids = alloc::vec![ModuleId::ffn(0, 1), ModuleId::ffn(0, 0)];
        assert!(ModuleCatalog::from_parts(ids, alloc::vec![1, 1]).is_err());
    }
}
