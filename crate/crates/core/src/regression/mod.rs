//! Relevance estimation: penalized least squares over (mask, utility)
//! pairs, fitted by mini-batch Adam and selected by held-out Kendall tau.

mod cv;
mod fit;
mod kendall;

pub use cv::{cross_validate, fallback_point, HOLDOUT_FRACTION, MIN_CV_ROWS};
pub use fit::{fit, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use kendall::kendall_tau;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::SubModelMask;
use crate::error::{Error, Result};
use crate::sampler::CandidatePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

/// One regression hyper-parameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub penalty: Penalty,
}

/// Cartesian hyper-parameter grid searched by [`cross_validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionGrid {
    pub gammas: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub epochs: usize,
    pub penalty: Penalty,
}

impl Default for RegressionGrid {
    fn default() -> Self {
        Self {
            gammas: alloc::vec![100.0, 0.0, 1e-4],
            learning_rates: alloc::vec![100.0, 10.0, 1.0, 0.1],
            batch_sizes: alloc::vec![32, 64, 128],
            epochs: 50,
            penalty: Penalty::L1,
        }
    }
}

impl RegressionGrid {
    pub fn single(point: HyperPoint) -> Self {
        Self {
            gammas: alloc::vec![point.gamma],
            learning_rates: alloc::vec![point.learning_rate],
            batch_sizes: alloc::vec![point.batch_size],
            epochs: point.epochs,
            penalty: point.penalty,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = HyperPoint> + '_ {
        self.gammas.iter().flat_map(move |&gamma| {
            self.learning_rates.iter().flat_map(move |&learning_rate| {
                self.batch_sizes.iter().map(move |&batch_size| HyperPoint {
                    gamma,
                    learning_rate,
                    batch_size,
                    epochs: self.epochs,
                    penalty: self.penalty,
                })
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return Err(Error::input("regression grid is empty"));
        }
        if self.epochs == 0 || self.batch_sizes.contains(&0) {
            return Err(Error::input("epochs and batch sizes must be positive"));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0))
            || self.learning_rates.iter().any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::input("gammas must be >= 0 and learning rates > 0"));
        }
        Ok(())
    }
}

/// Sub-model observations restricted to the candidate modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    /// Catalog position of each regressor column.
    pub columns: Vec<usize>,
    features: Vec<f64>,
    utilities: Vec<f64>,
}

impl EvalDataset {
    /// Rows of `(keep bits, utility)`; every row must have `columns.len()` bits.
    pub fn new(columns: Vec<usize>, rows: Vec<(Vec<bool>, f64)>) -> Result<Self> {
        let width = columns.len();
        let mut features = Vec::with_capacity(rows.len() * width);
        let mut utilities = Vec::with_capacity(rows.len());
        for (k, (bits, u)) in rows.into_iter().enumerate() {
            if bits.len() != width {
                return Err(Error::input(format!(
                    "row {k} has {} bits, expected {width}",
                    bits.len()
                )));
            }
            if !u.is_finite() {
                return Err(Error::input(format!("row {k} has non-finite utility")));
            }
            features.extend(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            utilities.push(u);
        }
        Ok(Self {
            columns,
            features,
            utilities,
        })
    }

    /// Projects full-catalog masks onto the plan's candidates.
    pub fn from_masks(plan: &CandidatePlan, masks: &[SubModelMask], utilities: &[f64]) -> Result<Self> {
        if masks.len() != utilities.len() {
            return Err(Error::input("mask and utility counts differ"));
        }
        let rows = masks
            .iter()
            .zip(utilities)
            .map(|(m, &u)| (plan.candidates.iter().map(|&i| m.is_kept(i)).collect(), u))
            .collect();
        Self::new(plan.candidates.clone(), rows)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.utilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utilities.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.features[k * w..(k + 1) * w]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    /// Population mean and standard deviation of the utilities; a zero
    /// deviation is reported as 1.
    pub fn utility_stats(&self) -> (f64, f64) {
        let n = self.len().max(1) as f64;
        let mean = self.utilities.iter().sum::<f64>() / n;
        let var = self.utilities.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        (mean, if std > 1e-12 { std } else { 1.0 })
    }

    pub(crate) fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.width());
        let mut utilities = Vec::with_capacity(rows.len());
        for &k in rows {
            features.extend_from_slice(self.row(k));
            utilities.push(self.utilities[k]);
        }
        Self {
            columns: self.columns.clone(),
            features,
            utilities,
        }
    }
}

/// Estimated relevance per candidate, in the utility's own scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScores {
    /// Catalog position of each coefficient.
    pub columns: Vec<usize>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub hyper: HyperPoint,
    /// Held-out Kendall tau of the winning grid point, when cross-validated.
    pub validation_tau: Option<f64>,
    /// Utility mean and std used for standardization.
    pub utility_mean: f64,
    pub utility_std: f64,
}

impl RelevanceScores {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Relevance over a whole catalog: candidates get β, everything else +∞.
    pub fn expand(&self, catalog_len: usize) -> Vec<f64> {
        let mut out = alloc::vec![f64::INFINITY; catalog_len];
        for (&pos, &b) in self.columns.iter().zip(&self.beta) {
            out[pos] = b;
        }
        out
    }
}
