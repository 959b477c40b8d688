//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! source = "synthetic"     # or "checkpoint" with `path`
//! seed = 1
//!
//! [corpus]
//! source = "markov"        # "file" (path, chunk_len) or "model" (sampled)
//! length = 4096
//! chunk_len = 17
//! seed = 2
//!
//! [prune]
//! target_sparsity = 0.5
//! iter_sparsity = 0.1
//! total_submodels = 200
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use bonsai_core::catalog::ModuleCatalog;
use bonsai_core::engine::{ModelBundle, ModelConfig};
use bonsai_core::eval::Corpus;
use bonsai_core::priors::PriorMetric;
use bonsai_core::pruner::PruneConfig;
use bonsai_core::regression::RegressionGrid;
use serde::{Deserialize, Serialize};

use crate::bench::DEFAULT_WARMUP;
use crate::checkpoint::load_checkpoint;
use crate::corpus_io::corpus_load;
use crate::error::{ForgeError, Result};
use crate::mask_format::parse_mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the prune run itself.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSource,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub regression: RegressionGrid,
    #[serde(default)]
    pub bench: BenchSection,
    /// Worker threads for mask evaluation; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ModelSource {
    Checkpoint {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "ModelConfig::tiny")]
        config: ModelConfig,
        #[serde(default)]
        seed: u64,
        #[serde(default = "unit_scale")]
        scale: f32,
    },
}

fn unit_scale() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CorpusSource {
    File {
        path: PathBuf,
        chunk_len: usize,
    },
    Markov {
        length: usize,
        chunk_len: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Text sampled from the configured model, optionally restricted to the
    /// modules kept by a mask file.
    Model {
        chunks: usize,
        chunk_len: usize,
        #[serde(default = "unit_scale")]
        temperature: f32,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        keep: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub target_sparsity: f64,
    pub iter_sparsity: f64,
    pub total_submodels: usize,
    pub prior: PriorMetric,
    pub candidate_multiplier: f64,
    pub calibration_chunks: usize,
    pub eval_chunks: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        let d = PruneConfig::default();
        Self {
            target_sparsity: d.target_sparsity,
            iter_sparsity: d.iter_sparsity,
            total_submodels: d.total_submodels,
            prior: d.prior,
            candidate_multiplier: d.candidate_multiplier,
            calibration_chunks: d.calibration_chunks,
            eval_chunks: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Timed chunks for parent and pruned model; 0 skips benchmarking.
    pub chunks: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { chunks: 0, warmup: DEFAULT_WARMUP }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ForgeError::Input(format!("config: {e}")))
    }

    /// Reads a config and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ModelSource::Checkpoint { path } = &mut config.model {
            resolve(path);
        }
        match &mut config.corpus {
            CorpusSource::File { path, .. } => resolve(path),
            CorpusSource::Model { keep: Some(path), .. } => resolve(path),
            _ => {}
        }
        Ok(config)
    }

    pub fn prune_config(&self) -> PruneConfig {
        let p = &self.prune;
        PruneConfig {
            target_sparsity: p.target_sparsity,
            iter_sparsity: p.iter_sparsity,
            total_submodels: p.total_submodels,
            prior: p.prior,
            candidate_multiplier: p.candidate_multiplier,
            grid: self.regression.clone(),
            seed: self.seed,
            calibration_chunks: p.calibration_chunks,
            eval_chunks: p.eval_chunks,
        }
    }

    pub fn build_model(&self) -> Result<ModelBundle> {
        match &self.model {
            ModelSource::Checkpoint { path } => load_checkpoint(path),
            ModelSource::Synthetic { config, seed, scale } => {
                Ok(ModelBundle::random(*config, *seed, *scale)?)
            }
        }
    }

    /// Builds the corpus; `model` is only consulted for sampled corpora.
    pub fn build_corpus(&self, model: &ModelBundle) -> Result<Corpus> {
        match &self.corpus {
            CorpusSource::File { path, chunk_len } => corpus_load(path, *chunk_len),
            CorpusSource::Markov { length, chunk_len, seed } => Ok(Corpus::synthesize(
                model.config().vocab_size,
                *length,
                *chunk_len,
                *seed,
            )?),
            CorpusSource::Model { chunks, chunk_len, temperature, seed, keep } => {
                let mask = match keep {
                    Some(path) => {
                        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
                        Some(parse_mask(&text, &ModuleCatalog::of_model(model))?)
                    }
                    None => None,
                };
                Ok(Corpus::sample_from_model(model, mask.as_ref(), *chunks, *chunk_len, *temperature, *seed)?)
            }
        }
    }
}
