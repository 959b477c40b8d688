use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fit, kendall_tau, EvalDataset, HyperPoint, Penalty, RegressionGrid, RelevanceScores};
use crate::error::{Error, Result};

pub const HOLDOUT_FRACTION: f64 = 0.2;
pub const MIN_CV_ROWS: usize = 10;

/// Point used when every grid point diverges, or when there are too few
/// rows to hold any out.
pub fn fallback_point(epochs: usize, penalty: Penalty) -> HyperPoint {
    HyperPoint {
        gamma: 1e-4,
        learning_rate: 0.1,
        batch_size: 32,
        epochs,
        penalty,
    }
}

/// Fits every grid point on a seeded 80% split, keeps the one whose
/// held-out predictions best rank-correlate (Kendall tau) with the true
/// utilities, and refits it on all rows.
///
/// A constant-utility holdout scores tau 0. Ties keep the earlier grid point.
pub fn cross_validate(data: &EvalDataset, grid: &RegressionGrid, seed: u64) -> Result<RelevanceScores> {
    if data.len() < MIN_CV_ROWS {
        return Err(Error::input(format!(
            "cross-validation needs at least {MIN_CV_ROWS} rows, got {}",
            data.len()
        )));
    }
    grid.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let holdout = (libm::round(HOLDOUT_FRACTION * data.len() as f64) as usize).max(2);
    let (valid_rows, train_rows) = order.split_at(holdout);
    let train = data.subset(train_rows);
    let valid = data.subset(valid_rows);

    let mut best: Option<(HyperPoint, f64)> = None;
    for point in grid.points() {
        let point_seed = rng.next_u64();
        let scores = match fit(&train, &point, point_seed) {
            Ok(s) => s,
            Err(Error::Numeric { detail, .. }) => {
                log::debug!("grid point {point:?} skipped: {detail}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let preds: Vec<f64> = (0..valid.len()).map(|k| scores.predict(valid.row(k))).collect();
        let tau = if preds.iter().all(|p| p.is_finite()) {
            kendall_tau(&preds, valid.utilities())?
        } else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, t)| tau > *t) {
            best = Some((point, tau));
        }
    }

    let refit_seed = rng.next_u64();
    match best {
        Some((point, tau)) => {
            let mut scores = fit(data, &point, refit_seed)?;
            scores.validation_tau = Some(tau);
            Ok(scores)
        }
        None => {
            let point = fallback_point(grid.epochs, grid.penalty);
            log::warn!("every regression grid point diverged; falling back to {point:?}");
            fit(data, &point, refit_seed)
        }
    }
}
