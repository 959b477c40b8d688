//! Candidate restriction and prior-weighted sub-model sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ModuleCatalog, SubModelMask};
use crate::error::{Error, Result};
use crate::priors::PriorScores;

/// Which modules are perturbed this iteration and how much mass each mask drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    /// Catalog positions that every mask keeps.
    pub fixed: Vec<usize>,
    /// Catalog positions that masks may drop, ascending.
    pub candidates: Vec<usize>,
    /// Keep-weight per candidate (prior normalized within its group).
    pub weights: Vec<f64>,
    /// Parameter size per candidate.
    pub sizes: Vec<u64>,
    /// Parameter mass every sampled mask drops at least.
    pub drop_mass: u64,
    /// Fewest candidates whose sizes reach `drop_mass`.
    pub quota: usize,
    /// Catalog length the masks are laid over.
    pub catalog_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    /// Fraction of parameter mass removed this iteration.
    pub iter_sparsity: f64,
    /// Candidate fraction per group is `multiplier · iter_sparsity`.
    pub multiplier: f64,
    /// Overrides the default `⌈iter_sparsity · D_live⌉` drop mass.
    pub drop_mass: Option<u64>,
    /// Breaks prior ties by a seeded shuffle instead of catalog order.
    pub tie_seed: Option<u64>,
}

impl PlanOptions {
    pub fn new(iter_sparsity: f64) -> Self {
        Self {
            iter_sparsity,
            multiplier: 2.0,
            drop_mass: None,
            tie_seed: None,
        }
    }
}

fn ceil_tol(x: f64) -> f64 {
    libm::ceil(x - 1e-9)
}

/// Candidate plan with the default multiplier of 2 and drop mass `p_iter · D_live`.
pub fn plan_candidates(
    catalog: &ModuleCatalog,
    priors: &PriorScores,
    iter_sparsity: f64,
) -> Result<CandidatePlan> {
    plan_candidates_with(catalog, priors, PlanOptions::new(iter_sparsity))
}

pub fn plan_candidates_with(
    catalog: &ModuleCatalog,
    priors: &PriorScores,
    opts: PlanOptions,
) -> Result<CandidatePlan> {
    let p = opts.iter_sparsity;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::input(format!("iteration sparsity {p} outside (0, 1]")));
    }
    if !(opts.multiplier > 0.0) {
        return Err(Error::input("candidate multiplier must be positive"));
    }
    let fraction = opts.multiplier * p;
    if fraction > 1.0 + 1e-12 {
        return Err(Error::input(format!(
            "candidate fraction {fraction} exceeds the group (iteration sparsity {p} x multiplier {})",
            opts.multiplier
        )));
    }
    if priors.len() != catalog.len() {
        return Err(Error::input(format!(
            "prior covers {} modules, catalog has {}",
            priors.len(),
            catalog.len()
        )));
    }
    if priors.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input("prior scores must be finite and nonnegative"));
    }

    let tie: Vec<u64> = match opts.tie_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..catalog.len()).map(|_| rng.next_u64()).collect()
        }
        None => vec![0; catalog.len()],
    };
    let mut fixed = Vec::new();
    let mut cand: Vec<(usize, f64)> = Vec::new();
    for group in catalog.groups() {
        let mut order: Vec<usize> = group.range.clone().collect();
        // highest prior first
        order.sort_by(|&a, &b| {
            priors.values[b]
                .partial_cmp(&priors.values[a])
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(tie[a].cmp(&tie[b]))
                .then(a.cmp(&b))
        });
        let n_cand = (ceil_tol(fraction * order.len() as f64) as usize).min(order.len());
        let split = order.len() - n_cand;
        fixed.extend_from_slice(&order[..split]);
        let members = &order[split..];
        let mean = members.iter().map(|&i| priors.values[i]).sum::<f64>() / members.len().max(1) as f64;
        for &i in members {
            let w = if mean > 0.0 { priors.values[i] / mean } else { 1.0 };
            cand.push((i, w));
        }
    }
    fixed.sort_unstable();
    cand.sort_by_key(|&(i, _)| i);

    let candidates: Vec<usize> = cand.iter().map(|&(i, _)| i).collect();
    let weights: Vec<f64> = cand.iter().map(|&(_, w)| w).collect();
    let sizes: Vec<u64> = candidates.iter().map(|&i| catalog.sizes()[i]).collect();
    let candidate_mass: u64 = sizes.iter().sum();
    let drop_mass = opts
        .drop_mass
        .unwrap_or_else(|| ceil_tol(p * catalog.total_size() as f64) as u64)
        .min(candidate_mass);

    let mut ascending = sizes.clone();
    ascending.sort_unstable();
    let mut acc = 0;
    let mut quota = 0;
    for s in ascending {
        if acc >= drop_mass {
            break;
        }
        acc += s;
        quota += 1;
    }

    Ok(CandidatePlan {
        fixed,
        candidates,
        weights,
        sizes,
        drop_mass,
        quota,
        catalog_len: catalog.len(),
    })
}

/// Order of indices produced by sequential weighted draws without
/// replacement; earlier entries are the preferred keeps.
///
/// When every remaining weight is zero the rest are drawn uniformly.
pub fn weighted_order<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut order = Vec::with_capacity(weights.len());
    while !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = remaining.len() - 1;
            for (slot, &i) in remaining.iter().enumerate() {
                if weights[i] <= 0.0 {
                    continue;
                }
                if target < weights[i] {
                    chosen = slot;
                    break;
                }
                target -= weights[i];
                chosen = slot;
            }
            chosen
        } else {
            rng.gen_range(0..remaining.len())
        };
        order.push(remaining.remove(pick));
    }
    order
}

/// Samples one mask: candidates are ranked by a weighted keep-draw and the
/// least preferred are dropped until `drop_mass` is reached.
pub fn sample_mask(plan: &CandidatePlan, seed: u64) -> SubModelMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = if plan.weights.iter().all(|&w| w <= 0.0) {
        vec![1.0; plan.weights.len()]
    } else {
        plan.weights.clone()
    };
    let order = weighted_order(&weights, &mut rng);
    let mut mask = SubModelMask::full(plan.catalog_len);
    let mut dropped = 0;
    for &slot in order.iter().rev() {
        if dropped >= plan.drop_mass {
            break;
        }
        mask.set(plan.candidates[slot], false);
        dropped += plan.sizes[slot];
    }
    mask
}

/// `n_iter / 2` sampled masks, each followed by its complement.
///
/// An odd `n_iter` is rounded up.
pub fn build_batch(plan: &CandidatePlan, n_iter: usize, seed: u64) -> Result<Vec<SubModelMask>> {
    if n_iter < 2 {
        return Err(Error::input(format!("batch needs at least 2 masks, got {n_iter}")));
    }
    let n = if n_iter % 2 == 1 {
        log::warn!("odd batch size {n_iter} rounded up to {}", n_iter + 1);
        n_iter + 1
    } else {
        n_iter
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let mask = sample_mask(plan, rng.next_u64());
        let comp = mask.complement(&plan.fixed)?;
        batch.push(mask);
        batch.push(comp);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ModuleId, ModuleKind};
    use crate::engine::ModelConfig;
    use crate::priors::{prior_uniform, PriorMetric};

    fn tiny() -> ModuleCatalog {
        ModuleCatalog::enumerate(&ModelConfig::tiny())
    }

    fn prior(values: Vec<f64>) -> PriorScores {
        PriorScores {
            values,
            metric: PriorMetric::Wanda,
            samples: 1,
        }
    }

    #[test]
    fn ffn_group_bottom_candidates() {
        let ids: Vec<_> = (0..16).map(|j| ModuleId::ffn(0, j)).collect();
        let c = ModuleCatalog::from_parts(ids, vec![1; 16]).unwrap();
        let p = prior((0..16).map(|i| ((i * 7) % 16) as f64).collect());
        let plan = plan_candidates(&c, &p, 0.25).unwrap();
        assert_eq!(plan.candidates.len(), 8);
        let mut worst: Vec<usize> = (0..16).filter(|&i| (i * 7) % 16 < 8).collect();
        worst.sort_unstable();
        assert_eq!(plan.candidates, worst);
        assert_eq!(plan.fixed.len(), 8);
    }

    #[test]
    fn uniform_half_makes_everything_candidate() {
        let c = tiny();
        let plan = plan_candidates(&c, &prior_uniform(&c), 0.5).unwrap();
        assert_eq!(plan.candidates.len(), 36);
        assert!(plan.fixed.is_empty());
    }

    #[test]
    fn tiny_quota_example() {
        let c = tiny();
        let plan = plan_candidates(&c, &prior_uniform(&c), 0.05).unwrap();
        assert_eq!(plan.drop_mass, 64);
        // per group: ⌈0.1·2⌉ = 1 head, ⌈0.1·16⌉ = 2 FFN dims
        assert_eq!(plan.candidates.len(), 6);
        // oracle: smallest sizes accumulated until ≥ 64
        let mut sizes = plan.sizes.clone();
        sizes.sort_unstable();
        let mut acc = 0;
        let mut k = 0;
        while acc < 64 {
            acc += sizes[k];
            k += 1;
        }
        assert_eq!(plan.quota, k);
        assert_eq!(plan.quota, 3);
        // uniform tie-break: the last modules of each group are the candidates
        assert!(plan.candidates.contains(&1));
        assert!(plan.candidates.contains(&17));
    }

    #[test]
    fn too_large_iteration_sparsity() {
        let c = tiny();
        assert!(matches!(
            plan_candidates(&c, &prior_uniform(&c), 0.6),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_quota_keeps_everything() {
        let c = tiny();
        let plan = plan_candidates_with(
            &c,
            &prior_uniform(&c),
            PlanOptions {
                drop_mass: Some(0),
                ..PlanOptions::new(0.25)
            },
        )
        .unwrap();
        assert_eq!(sample_mask(&plan, 9), SubModelMask::full(36));
    }

    #[test]
    fn full_quota_drops_every_candidate() {
        let c = tiny();
        let plan = plan_candidates_with(
            &c,
            &prior_uniform(&c),
            PlanOptions {
                drop_mass: Some(u64::MAX),
                ..PlanOptions::new(0.25)
            },
        )
        .unwrap();
        let m = sample_mask(&plan, 3);
        for &i in &plan.candidates {
            assert!(!m.is_kept(i));
        }
        for &i in &plan.fixed {
            assert!(m.is_kept(i));
        }
    }

    #[test]
    fn weighted_keep_frequency() {
        let plan = CandidatePlan {
            fixed: vec![],
            candidates: vec![0, 1],
            weights: vec![3.0, 1.0],
            sizes: vec![1, 1],
            drop_mass: 1,
            quota: 1,
            catalog_len: 2,
        };
        let draws = 10_000;
        let kept0 = (0..draws).filter(|&s| sample_mask(&plan, s).is_kept(0)).count();
        let frac = kept0 as f64 / draws as f64;
        assert!((frac - 0.75).abs() <= 0.02, "kept fraction {frac}");
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let plan = CandidatePlan {
            fixed: vec![],
            candidates: vec![0, 1],
            weights: vec![0.0, 0.0],
            sizes: vec![1, 1],
            drop_mass: 1,
            quota: 1,
            catalog_len: 2,
        };
        let kept0 = (0..4000).filter(|&s| sample_mask(&plan, s).is_kept(0)).count();
        assert!((kept0 as f64 / 4000.0 - 0.5).abs() < 0.04);
    }

    #[test]
    fn batch_pairs_and_determinism() {
        let c = tiny();
        let p = prior((0..36).map(|i| 1.0 + (i % 5) as f64).collect());
        let plan = plan_candidates(&c, &p, 0.25).unwrap();
        let batch = build_batch(&plan, 4, 77).unwrap();
        assert_eq!(batch.len(), 4);
        assert_eq!(batch, build_batch(&plan, 4, 77).unwrap());
        assert_ne!(batch, build_batch(&plan, 4, 78).unwrap());
        for pair in batch.chunks(2) {
            assert_eq!(pair[0].complement(&plan.fixed).unwrap(), pair[1]);
        }
        assert_eq!(build_batch(&plan, 5, 1).unwrap().len(), 6);
        assert!(matches!(build_batch(&plan, 1, 1), Err(Error::Input(_))));
    }

    #[test]
    fn complement_pairs_partition_candidates_at_half_quota() {
        let ids: Vec<_> = (0..12).map(|j| ModuleId::ffn(0, j)).collect();
        let c = ModuleCatalog::from_parts(ids, vec![5; 12]).unwrap();
        let p = prior((0..12).map(|i| 1.0 + i as f64).collect());
        let plan = plan_candidates(&c, &p, 0.25).unwrap();
        assert_eq!(plan.candidates.len(), 6);
        assert_eq!(plan.quota, 3);
        for pair in build_batch(&plan, 10, 5).unwrap().chunks(2) {
            for &i in &plan.candidates {
                assert!(pair[0].is_kept(i) ^ pair[1].is_kept(i));
            }
            assert_eq!(pair[0].dropped_positions().count(), 3);
            assert_eq!(pair[1].dropped_positions().count(), 3);
        }
    }

    #[test]
    fn kinds_are_grouped_separately() {
        let c = tiny();
        let plan = plan_candidates(&c, &prior_uniform(&c), 0.25).unwrap();
        let heads = plan
            .candidates
            .iter()
            .filter(|&&i| c.ids()[i].kind == ModuleKind::Head)
            .count();
        assert_eq!(heads, 2);
    }
}
