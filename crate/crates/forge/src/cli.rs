use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use bonsai_core::catalog::{ModuleCatalog, SubModelMask};
use bonsai_core::engine::{forward_traced, slice_mask, ActivationTrace, ModelBundle};
use bonsai_core::eval::{utility, Corpus, UtilityReport};
use bonsai_core::priors::{compute_prior, PriorMetric};
use bonsai_core::pruner::bonsai_run_with;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{bench, LatencyReport, DEFAULT_WARMUP};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::corpus_io::corpus_load;
use crate::error::{ForgeError, Result};
use crate::hooks::ThreadedHooks;
use crate::mask_format::{parse_mask, write_mask};
use crate::report::{report_emit, BenchPair, Manifest};

#[derive(Debug, Parser)]
#[command(name = "bonsai-forge", version, about = "Forward-pass-only structured pruning of small decoder transformers")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Where the model and corpus come from when not taken from the config.
#[derive(Debug, clap::Args)]
struct Inputs {
    /// Checkpoint to use instead of the config's model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Token file to use instead of the config's corpus.
    #[arg(long, requires = "chunk_len")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    chunk_len: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute per-module prior scores.
    Prior {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<PriorMetric>,
        /// Chunks of the corpus to trace.
        #[arg(long, default_value_t = 32)]
        chunks: usize,
    },
    /// Run the prune loop described by --config.
    Prune,
    /// Score a model's utility on a corpus.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Chunks to score (default: all).
        #[arg(long)]
        chunks: Option<usize>,
    },
    /// Time forward passes, optionally against a baseline report.
    Bench {
        #[command(flatten)]
        inputs: Inputs,
        /// Earlier bench report (JSON) to compute the speedup against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        chunks: usize,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// Write a checkpoint, sliced to a keep-set mask file when given.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mask file (`layer,kind,index,bit` lines) over the model's modules.
        #[arg(long)]
        keep: Option<PathBuf>,
    },
}

fn parse_metric(s: &str) -> std::result::Result<PriorMetric, String> {
    PriorMetric::parse(s).ok_or_else(|| format!("unknown metric {s:?} (wanda, act-magnitude, uniform)"))
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<RunConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(Some(config))
}

fn require<'a>(config: &'a Option<RunConfig>, what: &str) -> Result<&'a RunConfig> {
    config
        .as_ref()
        .ok_or_else(|| ForgeError::Input(format!("{what} needs --config")))
}

fn resolve_model(config: &Option<RunConfig>, checkpoint: &Option<PathBuf>) -> Result<ModelBundle> {
    match checkpoint {
        Some(path) => load_checkpoint(path),
        None => require(config, "a model without --checkpoint")?.build_model(),
    }
}

fn resolve_corpus(config: &Option<RunConfig>, inputs: &Inputs, model: &ModelBundle) -> Result<Corpus> {
    match (&inputs.corpus, inputs.chunk_len) {
        (Some(path), Some(len)) => corpus_load(path, len),
        _ => {
            let config = require(config, "a corpus without --corpus")?;
            // Sampled corpora come from the config's model, not a checkpoint override.
            let source_model;
            let model = if inputs.checkpoint.is_some() {
                source_model = config.build_model()?;
                &source_model
            } else {
                model
            };
            config.build_corpus(model)
        }
    }
}

fn emit(cli: &Cli, name: &str, json: &impl Serialize, csv: impl FnOnce() -> String) -> Result<()> {
    let text = match cli.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(json).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => csv(),
    };
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
            let ext = if cli.format == Format::Json { "json" } else { "csv" };
            let path = dir.join(format!("{name}.{ext}"));
            fs::write(&path, text).map_err(|e| ForgeError::io(path, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PriorEntry {
    module: String,
    score: f64,
}

#[derive(Serialize)]
struct PriorReport {
    metric: PriorMetric,
    samples: u64,
    modules: Vec<PriorEntry>,
}

#[derive(Serialize)]
struct EvalReport {
    model: String,
    #[serde(flatten)]
    report: UtilityReport,
}

fn execute(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Prior { inputs, metric, chunks } => {
            let model = resolve_model(&config, &inputs.checkpoint)?;
            let corpus = resolve_corpus(&config, inputs, &model)?;
            corpus.check_compatible(model.config())?;
            let metric = metric
                .or(config.as_ref().map(|c| c.prune.prior))
                .unwrap_or(PriorMetric::Wanda);
            let mut trace = ActivationTrace::default();
            for chunk in corpus.chunks().take((*chunks).max(1)) {
                forward_traced(&model, &chunk[..chunk.len() - 1], None, &mut trace)?;
            }
            let priors = compute_prior(metric, &model, &trace)?;
            let catalog = ModuleCatalog::of_model(&model);
            let report = PriorReport {
                metric: priors.metric,
                samples: priors.samples,
                modules: catalog
                    .ids()
                    .iter()
                    .zip(&priors.values)
                    .map(|(id, &score)| PriorEntry { module: id.to_string(), score })
                    .collect(),
            };
            emit(cli, "priors", &report, || {
                report.modules.iter().fold(String::from("module,score\n"), |mut acc, e| {
                    acc.push_str(&format!("{},{}\n", e.module, e.score));
                    acc
                })
            })
        }
        Command::Prune => prune(cli, require(&config, "prune")?),
        Command::Eval { inputs, chunks } => {
            let model = resolve_model(&config, &inputs.checkpoint)?;
            let corpus = resolve_corpus(&config, inputs, &model)?;
            let report = utility(&model, &corpus, None, chunks.unwrap_or(corpus.chunk_count()))?;
            let name = inputs
                .checkpoint
                .as_ref()
                .map_or_else(|| "config".to_string(), |p| p.display().to_string());
            let csv = || {
                format!(
                    "model,U,perplexity,tokens,chunks,finite\n{name},{},{},{},{},{}\n",
                    report.utility, report.perplexity, report.tokens, report.chunks, report.finite
                )
            };
            emit(cli, "eval", &EvalReport { model: name.clone(), report }, csv)
        }
        Command::Bench { inputs, baseline, chunks, warmup, label } => {
            let model = resolve_model(&config, &inputs.checkpoint)?;
            let corpus = resolve_corpus(&config, inputs, &model)?;
            let mut report = bench(&model, &corpus, *chunks, *warmup, label)?;
            if let Some(path) = baseline {
                let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
                let base: LatencyReport = serde_json::from_str(&text)
                    .map_err(|e| ForgeError::format(format!("{}: {e}", path.display())))?;
                report = report.with_baseline(&base);
            }
            let csv = || {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                format!(
                    "label,mean_ms,median_ms,p95_ms,tokens_per_second,speedup\n{},{},{},{},{},{}\n",
                    report.label,
                    report.mean_ms,
                    report.median_ms,
                    report.p95_ms,
                    report.tokens_per_second,
                    opt(report.speedup)
                )
            };
            emit(cli, "bench", &report, csv)
        }
        Command::Export { checkpoint, keep } => {
            let out = cli
                .out
                .as_ref()
                .ok_or_else(|| ForgeError::Input("export needs --out".into()))?;
            let model = resolve_model(&config, checkpoint)?;
            let model = match keep {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
                    let mask = parse_mask(&text, &ModuleCatalog::of_model(&model))?;
                    slice_mask(&model, &mask)?
                }
                None => model,
            };
            fs::create_dir_all(out).map_err(|e| ForgeError::io(out, e))?;
            save_checkpoint(&model, &out.join("model.ckpt"))
        }
    }
}

fn prune(cli: &Cli, config: &RunConfig) -> Result<()> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| ForgeError::Input("prune needs --out".into()))?;
    let started = Instant::now();
    let parent = config.build_model()?;
    let corpus = config.build_corpus(&parent)?;
    let mut hooks = ThreadedHooks::new(config.threads);
    let outcome = bonsai_run_with(&parent, &corpus, &config.prune_config(), &mut hooks)?;

    let bench_pair = if config.bench.chunks > 0 {
        let parent_lat = bench(&parent, &corpus, config.bench.chunks, config.bench.warmup, "parent")?;
        let pruned_lat = bench(&outcome.model, &corpus, config.bench.chunks, config.bench.warmup, "pruned")?
            .with_baseline(&parent_lat);
        Some(BenchPair { parent: parent_lat, pruned: pruned_lat })
    } else {
        None
    };

    let manifest = Manifest::new(
        config.clone(),
        &parent,
        &outcome,
        bench_pair,
        Some(started.elapsed().as_secs_f64() * 1e3),
    );
    report_emit(out, &manifest, &parent)?;
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    let parent_catalog = ModuleCatalog::of_model(&parent);
    let keep = SubModelMask::from_bits(parent_catalog.ids().iter().map(|id| outcome.keep.contains(id)).collect());
    let keep_path = out.join("keep.txt");
    fs::write(&keep_path, write_mask(&parent_catalog, &keep)).map_err(|e| ForgeError::io(keep_path, e))?;
    log::info!(
        "pruned {:.1}% of prunable parameters in {} iterations; outputs in {}",
        100.0 * outcome.sparsity_prunable(),
        outcome.records.len(),
        out.display()
    );
    Ok(())
}
