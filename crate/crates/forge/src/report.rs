//! Run manifest (JSON) and the flat plotting curve (CSV).

use std::fs;
use std::path::Path;

use bonsai_core::catalog::ModuleCatalog;
use bonsai_core::engine::{ModelBundle, ModelConfig};
use bonsai_core::eval::UtilityReport;
use bonsai_core::pruner::{IterationRecord, PruneOutcome};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::LatencyReport;
use crate::config::RunConfig;
use crate::error::{ForgeError, Result};

/// Manifest keys whose values depend on wall-clock time.
pub const TIMING_KEYS: &[&str] = &["wall_ms", "timing", "bench", "mean_latency_ms", "speedup"];

pub const CSV_COLUMNS: [&str; 7] = [
    "iteration",
    "sparsity_prunable",
    "sparsity_total",
    "U",
    "perplexity",
    "mean_latency_ms",
    "speedup",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub sparsity_prunable: f64,
    pub sparsity_total: f64,
    #[serde(rename = "U")]
    pub utility: Option<f64>,
    pub perplexity: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub config: ModelConfig,
    pub modules: usize,
    pub prunable_params: u64,
    pub total_params: u64,
}

impl ModelSummary {
    pub fn of(model: &ModelBundle) -> Self {
        Self {
            config: *model.config(),
            modules: model.live_module_count(),
            prunable_params: model.prunable_params(),
            total_params: model.total_params(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchPair {
    pub parent: LatencyReport,
    pub pruned: LatencyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub parent: ModelSummary,
    pub pruned: ModelSummary,
    pub iterations: Vec<IterationRecord>,
    pub keep: Vec<String>,
    pub sparsity_prunable: f64,
    pub sparsity_total: f64,
    pub final_eval: Option<UtilityReport>,
    pub curve: Vec<CurveRow>,
    pub bench: Option<BenchPair>,
    pub timing: Timing,
}

fn finite(r: Option<&UtilityReport>) -> (Option<f64>, Option<f64>) {
    match r {
        Some(r) if r.finite => (Some(r.utility), Some(r.perplexity)),
        _ => (None, None),
    }
}

/// One row per iteration (the model it started from) plus a final row.
/// Latency columns are filled on the first and last rows when benchmarked.
pub fn curve_rows(outcome: &PruneOutcome, bench: Option<&BenchPair>) -> Vec<CurveRow> {
    let mut rows = Vec::with_capacity(outcome.records.len() + 1);
    let mut removed = 0u64;
    for rec in &outcome.records {
        let (utility, perplexity) = finite(rec.eval.as_ref());
        rows.push(CurveRow {
            iteration: rec.index,
            sparsity_prunable: removed as f64 / outcome.parent_prunable as f64,
            sparsity_total: removed as f64 / outcome.parent_total as f64,
            utility,
            perplexity,
            mean_latency_ms: None,
            speedup: None,
        });
        removed += rec.removed_params;
    }
    let (utility, perplexity) = finite(outcome.final_eval.as_ref());
    rows.push(CurveRow {
        iteration: outcome.records.len(),
        sparsity_prunable: outcome.sparsity_prunable(),
        sparsity_total: outcome.sparsity_total(),
        utility,
        perplexity,
        mean_latency_ms: None,
        speedup: None,
    });
    if let Some(b) = bench {
        rows[0].mean_latency_ms = Some(b.parent.mean_ms);
        rows[0].speedup = Some(1.0);
        let last = rows.last_mut().unwrap();
        last.mean_latency_ms = Some(b.pruned.mean_ms);
        last.speedup = b.pruned.speedup;
    }
    rows
}

impl Manifest {
    pub fn new(
        config: RunConfig,
        parent: &ModelBundle,
        outcome: &PruneOutcome,
        bench: Option<BenchPair>,
        total_ms: Option<f64>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            parent: ModelSummary::of(parent),
            pruned: ModelSummary::of(&outcome.model),
            iterations: outcome.records.clone(),
            keep: outcome.keep.iter().map(ToString::to_string).collect(),
            sparsity_prunable: outcome.sparsity_prunable(),
            sparsity_total: outcome.sparsity_total(),
            final_eval: outcome.final_eval,
            curve: curve_rows(outcome, bench.as_ref()),
            bench,
            timing: Timing { total_ms },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| ForgeError::format(format!("curve csv: {e}")))?;
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(ForgeError::format(format!("curve csv: unexpected columns {headers:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ForgeError::format(format!("curve csv: {e}")))
}

/// Replaces every timing-dependent value with `null`, recursively.
pub fn mask_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if TIMING_KEYS.contains(&k.as_str()) {
                    *v = Value::Null;
                } else {
                    mask_timing(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(mask_timing),
        _ => {}
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| ForgeError::io(path, e))
}

/// Writes `manifest.json`, `curve.csv`, and per-iteration mask batches and
/// priors under `iterations/`.
pub fn report_emit(dir: &Path, manifest: &Manifest, parent: &ModelBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
    write(&dir.join("manifest.json"), &manifest.to_json())?;
    write(&dir.join("curve.csv"), &curve_csv(&manifest.curve))?;
    let iter_dir = dir.join("iterations");
    if !manifest.iterations.is_empty() {
        fs::create_dir_all(&iter_dir).map_err(|e| ForgeError::io(&iter_dir, e))?;
    }
    let mut model_catalog = ModuleCatalog::of_model(parent);
    for rec in &manifest.iterations {
        // Each iteration's masks and priors index the catalog it started from.
        if model_catalog.len() != rec.live_modules {
            return Err(ForgeError::Input(format!("iteration {} does not follow its predecessor", rec.index)));
        }
        write(
            &iter_dir.join(format!("{:03}-masks.txt", rec.index)),
            &crate::mask_format::write_batch(&model_catalog, rec.batch_seed, rec.index, &rec.masks),
        )?;
        write(
            &iter_dir.join(format!("{:03}-priors.txt", rec.index)),
            &crate::mask_format::write_priors(&model_catalog, &rec.priors),
        )?;
        let kept: Vec<_> = model_catalog
            .ids()
            .iter()
            .zip(model_catalog.sizes())
            .filter(|(id, _)| !rec.removed.contains(id))
            .map(|(&id, &s)| (id, s))
            .collect();
        let (ids, sizes) = kept.into_iter().unzip();
        model_catalog = ModuleCatalog::from_parts(ids, sizes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_curve_is_header_only() {
        assert_eq!(curve_csv(&[]), "iteration,sparsity_prunable,sparsity_total,U,perplexity,mean_latency_ms,speedup\n");
        assert!(parse_curve_csv(&curve_csv(&[])).unwrap().is_empty());
    }

    #[test]
    fn missing_values_are_blank_cells() {
        let row = CurveRow {
            iteration: 2,
            sparsity_prunable: 0.5,
            sparsity_total: 0.25,
            utility: Some(-1.5),
            perplexity: None,
            mean_latency_ms: None,
            speedup: Some(1.25),
        };
        let text = curve_csv(std::slice::from_ref(&row));
        assert!(text.ends_with("2,0.5,0.25,-1.5,,,1.25\n"));
        assert_eq!(parse_curve_csv(&text).unwrap(), vec![row]);
    }

    #[test]
    fn timing_is_masked_at_any_depth() {
        let mut v = serde_json::json!({
            "a": 1, "wall_ms": 3.0,
            "iterations": [{"wall_ms": 4.0, "index": 0}],
            "timing": {"total_ms": 9.0}
        });
        mask_timing(&mut v);
        assert_eq!(v, serde_json::json!({
            "a": 1, "wall_ms": null,
            "iterations": [{"wall_ms": null, "index": 0}],
            "timing": null
        }));
    }
}
