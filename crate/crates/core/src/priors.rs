//! Module-level prior relevance computed from an unmasked forward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::ModuleCatalog;
use crate::engine::{ActivationTrace, AxisStats, ModelBundle};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMetric {
    Wanda,
    ActMagnitude,
    Uniform,
}

impl PriorMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorMetric::Wanda => "wanda",
            PriorMetric::ActMagnitude => "act-magnitude",
            PriorMetric::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wanda" => Some(PriorMetric::Wanda),
            "act-magnitude" => Some(PriorMetric::ActMagnitude),
            "uniform" => Some(PriorMetric::Uniform),
            _ => None,
        }
    }
}

/// Nonnegative prior per live module, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorScores {
    pub values: Vec<f64>,
    pub metric: PriorMetric,
    /// Token positions the scores were computed from.
    pub samples: u64,
}

impl PriorScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when no module received a positive score.
    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v <= 0.0)
    }

    /// Replaces an all-zero prior by the uniform one.
    pub fn or_uniform(self) -> Self {
        if self.is_degenerate() {
            log::warn!(
                "{} prior is zero for every module; falling back to uniform",
                self.metric.as_str()
            );
            Self {
                values: vec![1.0; self.values.len()],
                metric: PriorMetric::Uniform,
                samples: self.samples,
            }
        } else {
            self
        }
    }
}

/// Mean absolute activation per module.
pub fn act_magnitude_scores(stats: &AxisStats) -> Vec<f64> {
    stats.mean_abs()
}

/// Mean over output channels of `|W[r, o]| · RMS(a_r)`, with the `group`
/// rows belonging to a module averaged together.
///
/// `out_proj` is the projection consuming the activations: `[modules·group, o]`.
pub fn wanda_scores(stats: &AxisStats, out_proj: &Matrix, group: usize) -> Result<Vec<f64>> {
    if group == 0 || out_proj.rows() != stats.modules() * group {
        return Err(Error::input(format!(
            "output projection has {} rows, trace implies {} x {group}",
            out_proj.rows(),
            stats.modules()
        )));
    }
    let rms = stats.rms();
    let denom = (out_proj.cols() * group) as f64;
    Ok(rms
        .iter()
        .enumerate()
        .map(|(m, &r)| {
            let weight: f64 = (m * group..(m + 1) * group)
                .map(|row| {
                    out_proj
                        .row(row)
                        .iter()
                        .map(|w| libm::fabs(*w as f64))
                        .sum::<f64>()
                })
                .sum();
            r * weight / denom
        })
        .collect())
}

fn check_trace(trace: &ActivationTrace) -> Result<()> {
    if trace.is_empty() || trace.layers.is_empty() {
        return Err(Error::input("activation trace is empty"));
    }
    Ok(())
}

/// Averaged activation magnitude prior, catalog-ordered.
pub fn prior_act_magnitude(trace: &ActivationTrace) -> Result<PriorScores> {
    check_trace(trace)?;
    let mut values = Vec::new();
    for layer in &trace.layers {
        values.extend(act_magnitude_scores(&layer.attention));
        values.extend(act_magnitude_scores(&layer.ffn));
    }
    Ok(PriorScores {
        values,
        metric: PriorMetric::ActMagnitude,
        samples: trace.positions,
    })
}

/// Module-level Wanda analogue, catalog-ordered.
pub fn prior_wanda(trace: &ActivationTrace, model: &ModelBundle) -> Result<PriorScores> {
    check_trace(trace)?;
    if trace.layers.len() != model.layers().len() {
        return Err(Error::input("trace and model differ in layer count"));
    }
    let hd = model.config().head_dim;
    let mut values = Vec::new();
    for (lt, lw) in trace.layers.iter().zip(model.layers()) {
        values.extend(wanda_scores(&lt.attention, &lw.wo, hd)?);
        values.extend(wanda_scores(&lt.ffn, &lw.w_down, 1)?);
    }
    Ok(PriorScores {
        values,
        metric: PriorMetric::Wanda,
        samples: trace.positions,
    })
}

pub fn prior_uniform(catalog: &ModuleCatalog) -> PriorScores {
    PriorScores {
        values: vec![1.0; catalog.len()],
        metric: PriorMetric::Uniform,
        samples: 0,
    }
}

/// Dispatches on `metric`; `trace` must come from `model`.
pub fn compute_prior(
    metric: PriorMetric,
    model: &ModelBundle,
    trace: &ActivationTrace,
) -> Result<PriorScores> {
    match metric {
        PriorMetric::Wanda => prior_wanda(trace, model),
        PriorMetric::ActMagnitude => prior_act_magnitude(trace),
        PriorMetric::Uniform => Ok(prior_uniform(&ModuleCatalog::of_model(model))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{forward_traced, ModelConfig};
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn act_magnitude_hand_example() {
        let stats = AxisStats::from_samples(&[1.0, -2.0, -3.0, 2.0], 2).unwrap();
        assert_eq!(act_magnitude_scores(&stats), vec![2.0, 2.0]);
    }

    #[test]
    fn act_magnitude_zero_and_homogeneity() {
        let zero = AxisStats::from_samples(&[0.0; 6], 3).unwrap();
        assert_eq!(act_magnitude_scores(&zero), vec![0.0; 3]);
        let a = [0.5, -1.0, 2.0, 3.0, 0.1, -0.2];
        let b: Vec<f32> = a.iter().map(|v| v * 2.0).collect();
        let sa = act_magnitude_scores(&AxisStats::from_samples(&a, 3).unwrap());
        let sb = act_magnitude_scores(&AxisStats::from_samples(&b, 3).unwrap());
        for (x, y) in sa.iter().zip(&sb) {
            assert!(close(2.0 * x, *y, 1e-12));
        }
    }

    #[test]
    fn wanda_hand_example() {
        let w = Matrix::new(2, 2, vec![1.0, -2.0, 3.0, 0.0]).unwrap();
        let stats = AxisStats::from_samples(&[1.0, 2.0, 3.0, 2.0], 2).unwrap();
        let rms = stats.rms();
        assert!(close(rms[0], libm::sqrt(5.0), 1e-12));
        assert!(close(rms[1], 2.0, 1e-12));
        let s = wanda_scores(&stats, &w, 1).unwrap();
        // a^0 = [√5, 6], a^1 = [2√5, 0]
        assert!(close(s[0], 1.5 * libm::sqrt(5.0), 1e-12));
        assert!(close(s[0], 3.354, 1e-3));
        assert!(close(s[1], 3.0, 1e-12));
    }

    #[test]
    fn wanda_zero_weights() {
        let stats = AxisStats::from_samples(&[1.0, 2.0, 3.0, 2.0], 2).unwrap();
        let s = wanda_scores(&stats, &Matrix::zeros(2, 5), 1).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn wanda_shape_mismatch() {
        let stats = AxisStats::from_samples(&[1.0, 2.0], 2).unwrap();
        assert!(matches!(
            wanda_scores(&stats, &Matrix::zeros(3, 2), 1),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn wanda_permutation_equivariance() {
        let samples = [1.0, -0.5, 2.0, 0.3, 0.2, -1.5, 0.7, 0.9, -0.1];
        let w = Matrix::from_fn(3, 4, |r, c| (r as f32 + 1.0) * (c as f32 - 1.5));
        let base = wanda_scores(&AxisStats::from_samples(&samples, 3).unwrap(), &w, 1).unwrap();
        let perm = [2usize, 0, 1];
        let psamples: Vec<f32> = samples
            .chunks(3)
            .flat_map(|row| perm.iter().map(move |&p| row[p]))
            .collect();
        let pw = w.select_rows(&perm);
        let permuted = wanda_scores(&AxisStats::from_samples(&psamples, 3).unwrap(), &pw, 1).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!(close(permuted[i], base[p], 1e-12));
        }
    }

    #[test]
    fn wanda_heads_pool_channels() {
        // two heads of width 2, three positions
        let rows = [1.0, -1.0, 0.0, 2.0, 3.0, 1.0, -2.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let mut stats = AxisStats::new(2);
        stats.observe(&rows, 2).unwrap();
        let w = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f32 - 5.0);
        let got = wanda_scores(&stats, &w, 2).unwrap();
        // brute force: pool each head's channels as samples
        for h in 0..2 {
            let mut sq = 0.0f64;
            let mut n = 0.0;
            for t in 0..3 {
                for c in 0..2 {
                    let v = rows[t * 4 + h * 2 + c] as f64;
                    sq += v * v;
                    n += 1.0;
                }
            }
            let rms = libm::sqrt(sq / n);
            let mut acc = 0.0;
            for r in h * 2..h * 2 + 2 {
                for o in 0..3 {
                    acc += libm::fabs(w.get(r, o) as f64) * rms;
                }
            }
            assert!(close(got[h], acc / 6.0, 1e-12));
        }
    }

    #[test]
    fn empty_trace_is_input_error() {
        let t = ActivationTrace::default();
        assert!(matches!(prior_act_magnitude(&t), Err(Error::Input(_))));
        let model = ModelBundle::zeros(ModelConfig::tiny()).unwrap();
        assert!(matches!(prior_wanda(&t, &model), Err(Error::Input(_))));
    }

    #[test]
    fn uniform_prior_and_degenerate_fallback() {
        let c = ModuleCatalog::enumerate(&ModelConfig::tiny());
        let u = prior_uniform(&c);
        assert_eq!(u.values, vec![1.0; 36]);
        let z = PriorScores {
            values: vec![0.0; 4],
            metric: PriorMetric::Wanda,
            samples: 8,
        };
        assert!(z.is_degenerate());
        let f = z.or_uniform();
        assert_eq!(f.metric, PriorMetric::Uniform);
        assert_eq!(f.values, vec![1.0; 4]);
    }

    #[test]
    fn priors_cover_live_catalog() {
        let model = ModelBundle::random(ModelConfig::tiny(), 3, 1.0).unwrap();
        let mut trace = ActivationTrace::default();
        forward_traced(&model, &[1, 5, 9, 2, 7, 3], None, &mut trace).unwrap();
        let catalog = ModuleCatalog::of_model(&model);
        for metric in [PriorMetric::Wanda, PriorMetric::ActMagnitude] {
            let p = compute_prior(metric, &model, &trace).unwrap();
            assert_eq!(p.len(), catalog.len());
            assert!(p.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn priors_after_slicing_score_only_live_modules() {
        let model = ModelBundle::random(ModelConfig::tiny(), 4, 1.0).unwrap();
        let mut mask = crate::catalog::SubModelMask::full(model.live_module_count());
        for i in [1usize, 4, 5, 6, 25] {
            mask.set(i, false);
        }
        let sliced = crate::engine::slice_mask(&model, &mask).unwrap();
        let mut trace = ActivationTrace::default();
        forward_traced(&sliced, &[3, 1, 4, 1, 5], None, &mut trace).unwrap();
        let p = prior_wanda(&trace, &sliced).unwrap();
        assert_eq!(p.len(), 31);
        assert_eq!(p.len(), ModuleCatalog::of_model(&sliced).len());
    }

    fn argsort(v: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
        idx
    }

    #[test]
    fn ranking_is_scale_invariant() {
        let samples: Vec<f32> = (0..40).map(|i| libm::sinf(i as f32 * 0.7) * (i % 5) as f32).collect();
        let scaled: Vec<f32> = samples.iter().map(|v| v * 3.5).collect();
        let w = Matrix::from_fn(8, 3, |r, c| libm::cosf((r * 3 + c) as f32));
        let mut a = AxisStats::new(4);
        a.observe(&samples, 2).unwrap();
        let mut b = AxisStats::new(4);
        b.observe(&scaled, 2).unwrap();
        assert_eq!(argsort(&act_magnitude_scores(&a)), argsort(&act_magnitude_scores(&b)));
        assert_eq!(
            argsort(&wanda_scores(&a, &w, 2).unwrap()),
            argsort(&wanda_scores(&b, &w, 2).unwrap())
        );
    }
}
