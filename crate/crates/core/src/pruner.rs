//! The iterated prune loop: priors, candidate sampling, sub-model
//! evaluation, relevance regression and global greedy removal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ModuleCatalog, ModuleId, SubModelMask};
use crate::engine::{forward_traced, slice_mask, ActivationTrace, ModelBundle};
use crate::error::{Error, Result};
use crate::eval::{utility_on, Corpus, UtilityReport};
use crate::priors::{compute_prior, PriorMetric, PriorScores};
use crate::regression::{
    cross_validate, fallback_point, fit, EvalDataset, RegressionGrid, RelevanceScores, MIN_CV_ROWS,
};
use crate::sampler::{build_batch, plan_candidates_with, PlanOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Final fraction of prunable parameters to remove, in `[0, 1)`.
    pub target_sparsity: f64,
    /// Fraction of the parent's prunable parameters removed per iteration.
    pub iter_sparsity: f64,
    /// Sub-models evaluated across the whole run.
    pub total_submodels: usize,
    pub prior: PriorMetric,
    /// Candidates per group are `multiplier · iter_sparsity` of the group.
    pub candidate_multiplier: f64,
    pub grid: RegressionGrid,
    pub seed: u64,
    /// Calibration chunks redrawn each iteration.
    pub calibration_chunks: usize,
    /// Chunks held out at the end of the corpus for reporting (0 = none).
    pub eval_chunks: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            target_sparsity: 0.5,
            iter_sparsity: 0.05,
            total_submodels: 200,
            prior: PriorMetric::Wanda,
            candidate_multiplier: 2.0,
            grid: RegressionGrid::default(),
            seed: 0,
            calibration_chunks: 32,
            eval_chunks: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.target_sparsity;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("target sparsity {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(());
        }
        let pi = self.iter_sparsity;
        if !(pi > 0.0 && pi <= p + 1e-12) {
            return Err(Error::Config(format!(
                "iteration sparsity {pi} must be in (0, target sparsity {p}]"
            )));
        }
        if !(self.candidate_multiplier > 0.0) || self.candidate_multiplier * pi > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "candidate fraction {} x {pi} exceeds 1",
                self.candidate_multiplier
            )));
        }
        let (iters, _) = schedule(p, pi, self.total_submodels.max(2))?;
        if self.total_submodels < 2 * iters {
            return Err(Error::Config(format!(
                "{} sub-models cannot give each of {iters} iterations a mask pair",
                self.total_submodels
            )));
        }
        if self.calibration_chunks == 0 {
            return Err(Error::Config("calibration_chunks must be at least 1".into()));
        }
        self.grid.validate().map_err(|e| Error::Config(format!("{e}")))
    }
}

fn ceil_tol(x: f64) -> f64 {
    libm::ceil(x - 1e-9)
}

/// `(⌈p / p_iter⌉, ⌈n / iterations⌉)`, the latter rounded up to even.
pub fn schedule(p: f64, p_iter: f64, n: usize) -> Result<(usize, usize)> {
    if p == 0.0 {
        return Ok((0, 0));
    }
    if !(p > 0.0 && p < 1.0 && p_iter > 0.0 && p_iter <= p + 1e-12) {
        return Err(Error::Config(format!(
            "schedule needs 0 < p_iter <= p < 1 (p = {p}, p_iter = {p_iter})"
        )));
    }
    let iters = (ceil_tol(p / p_iter) as usize).max(1);
    let mut n_iter = n.div_ceil(iters);
    if n_iter % 2 == 1 {
        n_iter += 1;
    }
    Ok((iters, n_iter))
}

/// Keeps modules in order of decreasing relevance while the kept mass stays
/// within `budget`, stopping at the first module that would exceed it.
///
/// Ties go to catalog order. A group left empty gets its most relevant
/// module back; the least relevant finite-relevance module of a group with
/// at least two kept is then released while the budget is exceeded.
pub fn greedy_select(relevance: &[f64], catalog: &ModuleCatalog, budget: u64) -> Result<SubModelMask> {
    if relevance.len() != catalog.len() {
        return Err(Error::input(format!(
            "relevance covers {} modules, catalog has {}",
            relevance.len(),
            catalog.len()
        )));
    }
    if budget < catalog.min_feasible() {
        return Err(Error::Config(format!(
            "budget {budget} is below the {} parameters needed to keep one module per group",
            catalog.min_feasible()
        )));
    }
    let key = |i: usize| if relevance[i].is_nan() { f64::NEG_INFINITY } else { relevance[i] };
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let sizes = catalog.sizes();
    let mut keep = vec![false; catalog.len()];
    let mut kept_mass = 0u64;
    for &i in &order {
        if kept_mass + sizes[i] > budget {
            break;
        }
        keep[i] = true;
        kept_mass += sizes[i];
    }

    let group_of: Vec<usize> = {
        let mut g = vec![0; catalog.len()];
        for (gi, group) in catalog.groups().iter().enumerate() {
            for i in group.range.clone() {
                g[i] = gi;
            }
        }
        g
    };
    let mut kept_in_group: Vec<usize> = catalog
        .groups()
        .iter()
        .map(|g| g.range.clone().filter(|&i| keep[i]).count())
        .collect();
    for (gi, group) in catalog.groups().iter().enumerate() {
        if kept_in_group[gi] > 0 {
            continue;
        }
        let best = group
            .range
            .clone()
            .min_by_key(|&i| order.iter().position(|&o| o == i).unwrap())
            .expect("groups are non-empty");
        keep[best] = true;
        kept_mass += sizes[best];
        kept_in_group[gi] = 1;
        while kept_mass > budget {
            let victim = order
                .iter()
                .rev()
                .copied()
                .find(|&i| keep[i] && relevance[i].is_finite() && kept_in_group[group_of[i]] >= 2);
            match victim {
                Some(v) => {
                    keep[v] = false;
                    kept_mass -= sizes[v];
                    kept_in_group[group_of[v]] -= 1;
                }
                None => break,
            }
        }
    }
    Ok(SubModelMask::from_bits(keep))
}

/// Everything one prune iteration saw and decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub live_modules: usize,
    pub live_params: u64,
    pub calibration: Vec<usize>,
    pub priors: PriorScores,
    pub candidates: Vec<ModuleId>,
    pub drop_mass: u64,
    pub batch_seed: u64,
    pub masks: Vec<SubModelMask>,
    /// Utility per mask; `None` where the forward pass went non-finite.
    pub utilities: Vec<Option<f64>>,
    pub dropped_pairs: usize,
    /// Unmasked utility of the current model on the calibration chunks.
    pub baseline_utility: f64,
    pub relevance: RelevanceScores,
    pub removed: Vec<ModuleId>,
    pub removed_params: u64,
    /// Fraction of the parent's prunable parameters removed so far.
    pub cumulative_sparsity: f64,
    /// Held-out utility of the model this iteration started from.
    pub eval: Option<UtilityReport>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: ModelBundle,
    pub records: Vec<IterationRecord>,
    pub keep: Vec<ModuleId>,
    pub parent_prunable: u64,
    pub parent_total: u64,
    pub final_eval: Option<UtilityReport>,
}

impl PruneOutcome {
    pub fn sparsity_prunable(&self) -> f64 {
        1.0 - self.model.prunable_params() as f64 / self.parent_prunable as f64
    }

    pub fn sparsity_total(&self) -> f64 {
        1.0 - self.model.total_params() as f64 / self.parent_total as f64
    }
}

/// Extension points for timing, observation and parallel evaluation.
pub trait RunHooks {
    /// Monotonic milliseconds, when a clock is available.
    fn now_ms(&mut self) -> Option<f64> {
        None
    }

    /// Called with the model each iteration starts from (`stage` = index),
    /// and with the final model (`stage` = iteration count).
    fn on_model(&mut self, _stage: usize, _model: &ModelBundle) {}

    /// Scores every mask on the shared calibration chunks.
    fn evaluate(
        &mut self,
        model: &ModelBundle,
        chunks: &[&[u32]],
        masks: &[SubModelMask],
    ) -> Result<Vec<UtilityReport>> {
        masks
            .iter()
            .map(|m| utility_on(model, chunks.iter().copied(), Some(m)))
            .collect()
    }
}

/// Hooks that do nothing beyond sequential evaluation.
pub struct NoHooks;

impl RunHooks for NoHooks {}

pub fn bonsai_run(model: &ModelBundle, corpus: &Corpus, config: &PruneConfig) -> Result<PruneOutcome> {
    bonsai_run_with(model, corpus, config, &mut NoHooks)
}

pub fn bonsai_run_with(
    model: &ModelBundle,
    corpus: &Corpus,
    config: &PruneConfig,
    hooks: &mut dyn RunHooks,
) -> Result<PruneOutcome> {
    config.validate()?;
    corpus.check_compatible(model.config())?;
    let total_chunks = corpus.chunk_count();
    if config.eval_chunks >= total_chunks {
        return Err(Error::input(format!(
            "corpus has {total_chunks} chunks; {} held out for evaluation leaves none for calibration",
            config.eval_chunks
        )));
    }
    let pool = total_chunks - config.eval_chunks;
    let eval_chunks: Vec<&[u32]> = (pool..total_chunks).map(|i| corpus.chunk(i)).collect();
    let evaluate_held_out = |m: &ModelBundle| -> Result<Option<UtilityReport>> {
        if eval_chunks.is_empty() {
            Ok(None)
        } else {
            utility_on(m, eval_chunks.iter().copied(), None).map(Some)
        }
    };

    let parent_prunable = model.prunable_params();
    let parent_total = model.total_params();
    let mut current = model.clone();
    let mut records = Vec::new();

    let (iters, n_iter) = schedule(config.target_sparsity, config.iter_sparsity, config.total_submodels)?;
    let target_mass = ceil_tol(config.target_sparsity * parent_prunable as f64) as u64;
    let step_quota = ceil_tol(config.iter_sparsity * parent_prunable as f64) as u64;
    let mut removed_mass = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut index = 0;
    while removed_mass < target_mass {
        let started = hooks.now_ms();
        hooks.on_model(index, &current);
        let eval = evaluate_held_out(&current)?;

        let mut pool_idx: Vec<usize> = (0..pool).collect();
        pool_idx.shuffle(&mut rng);
        pool_idx.truncate(config.calibration_chunks.min(pool));
        pool_idx.sort_unstable();
        let calib: Vec<&[u32]> = pool_idx.iter().map(|&i| corpus.chunk(i)).collect();

        let catalog = ModuleCatalog::of_model(&current);
        let live_params = catalog.total_size();
        let mut trace = ActivationTrace::default();
        for chunk in &calib {
            forward_traced(&current, &chunk[..chunk.len() - 1], None, &mut trace)?;
        }
        let priors = compute_prior(config.prior, &current, &trace)?.or_uniform();
        let baseline = utility_on(&current, calib.iter().copied(), None)?;

        let step_mass = step_quota.min(target_mass - removed_mass);
        let fraction = (step_mass as f64 / live_params as f64).min(1.0 / config.candidate_multiplier);
        let plan = plan_candidates_with(
            &catalog,
            &priors,
            PlanOptions {
                iter_sparsity: fraction,
                multiplier: config.candidate_multiplier,
                drop_mass: Some(step_mass),
                tie_seed: Some(rng.next_u64()),
            },
        )?;
        let batch_seed = rng.next_u64();
        let masks = build_batch(&plan, n_iter, batch_seed)?;
        let reports = hooks.evaluate(&current, &calib, &masks)?;
        let utilities: Vec<Option<f64>> = reports
            .iter()
            .map(|r| (r.finite && r.utility.is_finite()).then_some(r.utility))
            .collect();

        let mut kept_masks = Vec::with_capacity(masks.len());
        let mut kept_utils = Vec::with_capacity(masks.len());
        let mut dropped_pairs = 0;
        for (pair_masks, pair_utils) in masks.chunks(2).zip(utilities.chunks(2)) {
            if pair_utils.iter().all(Option::is_some) {
                kept_masks.extend_from_slice(pair_masks);
                kept_utils.extend(pair_utils.iter().map(|u| u.unwrap()));
            } else {
                dropped_pairs += 1;
            }
        }
        let pairs = masks.len() / 2;
        if dropped_pairs > 0 {
            log::warn!("iteration {index}: dropped {dropped_pairs} of {pairs} mask pairs with non-finite utility");
        }
        if dropped_pairs * 2 > pairs {
            return Err(Error::numeric(
                None,
                format!("iteration {index}: {dropped_pairs} of {pairs} mask pairs produced non-finite utility"),
            ));
        }

        let data = EvalDataset::from_masks(&plan, &kept_masks, &kept_utils)?;
        let fit_seed = rng.next_u64();
        let relevance = if data.len() >= MIN_CV_ROWS {
            cross_validate(&data, &config.grid, fit_seed)?
        } else {
            fit(&data, &fallback_point(config.grid.epochs, config.grid.penalty), fit_seed)?
        };

        let budget = live_params - step_mass;
        let keep = greedy_select(&relevance.expand(catalog.len()), &catalog, budget)?;
        let removed: Vec<ModuleId> = keep.dropped_positions().map(|i| catalog.ids()[i]).collect();
        let removed_params = keep.dropped_mass(&catalog);
        current = slice_mask(&current, &keep)?;
        removed_mass += removed_params;

        records.push(IterationRecord {
            index,
            live_modules: catalog.len(),
            live_params,
            calibration: pool_idx,
            priors,
            candidates: plan.candidates.iter().map(|&i| catalog.ids()[i]).collect(),
            drop_mass: step_mass,
            batch_seed,
            masks,
            utilities,
            dropped_pairs,
            baseline_utility: baseline.utility,
            relevance,
            removed,
            removed_params,
            cumulative_sparsity: removed_mass as f64 / parent_prunable as f64,
            eval,
            wall_ms: match (started, hooks.now_ms()) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            },
        });
        index += 1;
        if index > iters + catalog.len() {
            return Err(Error::Config("prune loop failed to reach the target".into()));
        }
    }

    hooks.on_model(index, &current);
    let final_eval = evaluate_held_out(&current)?;
    let keep = ModuleCatalog::of_model(&current).ids().to_vec();
    Ok(PruneOutcome {
        model: current,
        records,
        keep,
        parent_prunable,
        parent_total,
        final_eval,
    })
}
