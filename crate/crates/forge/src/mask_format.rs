//! Line-oriented text for masks and priors: one `layer,kind,index,value`
//! line per module. Lines starting with `#` carry batch metadata.

use bonsai_core::catalog::{ModuleCatalog, ModuleId, ModuleKind, SubModelMask};
use bonsai_core::priors::PriorScores;

use crate::error::{ForgeError, Result};

fn module_line(id: &ModuleId, value: impl std::fmt::Display) -> String {
    format!("{},{},{},{value}\n", id.layer, id.kind.as_str(), id.index)
}

fn parse_line(line: &str, lineno: usize) -> Result<(ModuleId, &str)> {
    let bad = |what: &str| ForgeError::format(format!("line {lineno}: {what} in {line:?}"));
    let mut parts = line.split(',').map(str::trim);
    let (Some(layer), Some(kind), Some(index), Some(value), None) =
        (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad("expected layer,kind,index,value"));
    };
    let layer = layer.parse().map_err(|_| bad("bad layer"))?;
    let kind = ModuleKind::parse(kind).ok_or_else(|| bad("bad module kind"))?;
    let index = index.parse().map_err(|_| bad("bad index"))?;
    Ok((ModuleId { layer, kind, index }, value))
}

pub fn write_mask(catalog: &ModuleCatalog, mask: &SubModelMask) -> String {
    catalog
        .ids()
        .iter()
        .zip(mask.bits())
        .map(|(id, &b)| module_line(id, u8::from(b)))
        .collect()
}

/// Parses lines covering every module of `catalog` exactly once.
fn parse_body<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    catalog: &ModuleCatalog,
) -> Result<SubModelMask> {
    let mut bits: Vec<Option<bool>> = vec![None; catalog.len()];
    for (lineno, line) in lines {
        let (id, value) = parse_line(line, lineno)?;
        let pos = catalog
            .position(&id)
            .ok_or_else(|| ForgeError::format(format!("line {lineno}: module {id} is not in the model")))?;
        let bit = match value {
            "0" => false,
            "1" => true,
            _ => return Err(ForgeError::format(format!("line {lineno}: bit must be 0 or 1"))),
        };
        if bits[pos].replace(bit).is_some() {
            return Err(ForgeError::format(format!("line {lineno}: module {id} listed twice")));
        }
    }
    bits.iter()
        .zip(catalog.ids())
        .map(|(b, id)| b.ok_or_else(|| ForgeError::format(format!("module {id} missing from mask"))))
        .collect::<Result<Vec<bool>>>()
        .map(SubModelMask::from_bits)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_mask(text: &str, catalog: &ModuleCatalog) -> Result<SubModelMask> {
    parse_body(content_lines(text).filter(|(_, l)| !l.starts_with('#')), catalog)
}

pub fn write_batch(catalog: &ModuleCatalog, seed: u64, iteration: usize, masks: &[SubModelMask]) -> String {
    let mut out = format!("# batch seed={seed} iteration={iteration} masks={}\n", masks.len());
    for (k, mask) in masks.iter().enumerate() {
        out.push_str(&format!("# mask {k}\n"));
        out.push_str(&write_mask(catalog, mask));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBatch {
    pub seed: u64,
    pub iteration: usize,
    pub masks: Vec<SubModelMask>,
}

pub fn parse_batch(text: &str, catalog: &ModuleCatalog) -> Result<MaskBatch> {
    let mut lines = content_lines(text).peekable();
    let (_, header) = lines.next().ok_or_else(|| ForgeError::format("empty batch file"))?;
    let field = |key: &str| -> Result<u64> {
        header
            .strip_prefix("# batch ")
            .and_then(|rest| rest.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ForgeError::format(format!("batch header lacks {key}")))
    };
    let (seed, iteration, count) = (field("seed")?, field("iteration")? as usize, field("masks")? as usize);
    let mut masks = Vec::with_capacity(count);
    while let Some((lineno, line)) = lines.next() {
        if !line.starts_with("# mask") {
            return Err(ForgeError::format(format!("line {lineno}: expected a mask separator")));
        }
        let mut body = Vec::new();
        while let Some(&(n, l)) = lines.peek() {
            if l.starts_with('#') {
                break;
            }
            body.push((n, l));
            lines.next();
        }
        masks.push(parse_body(body.into_iter(), catalog)?);
    }
    if masks.len() != count {
        return Err(ForgeError::format(format!("header announces {count} masks, found {}", masks.len())));
    }
    Ok(MaskBatch { seed, iteration, masks })
}

pub fn write_priors(catalog: &ModuleCatalog, priors: &PriorScores) -> String {
    let mut out = format!("# prior metric={} samples={}\n", priors.metric.as_str(), priors.samples);
    for (id, v) in catalog.ids().iter().zip(&priors.values) {
        out.push_str(&module_line(id, v));
    }
    out
}

/// Reads per-module scores back in catalog order.
pub fn parse_priors(text: &str, catalog: &ModuleCatalog) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; catalog.len()];
    let mut seen = vec![false; catalog.len()];
    for (lineno, line) in content_lines(text).filter(|(_, l)| !l.starts_with('#')) {
        let (id, value) = parse_line(line, lineno)?;
        let pos = catalog
            .position(&id)
            .ok_or_else(|| ForgeError::format(format!("line {lineno}: module {id} is not in the model")))?;
        values[pos] = value
            .parse()
            .map_err(|_| ForgeError::format(format!("line {lineno}: bad score {value:?}")))?;
        seen[pos] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(ForgeError::format(format!("module {} missing from priors", catalog.ids()[i]))),
        None => Ok(values),
    }
}
