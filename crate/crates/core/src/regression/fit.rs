use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvalDataset, HyperPoint, Penalty, RelevanceScores};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Loss above this is treated as divergence.
const DIVERGENCE_LOSS: f64 = 1e12;

/// Minimizes `mean((z − b₀ − βᵀα)²) + γ·‖β‖` over standardized utilities `z`
/// with mini-batch Adam, then maps β and b₀ back to the utility scale.
///
/// `‖·‖` is the ℓ1 norm or the squared ℓ2 norm; the intercept is not
/// penalized. A non-finite or exploding loss is reported as a numeric error.
pub fn fit(data: &EvalDataset, hp: &HyperPoint, seed: u64) -> Result<RelevanceScores> {
    if data.len() < 2 {
        return Err(Error::input(format!(
            "regression needs at least 2 rows, got {}",
            data.len()
        )));
    }
    if !(hp.gamma.is_finite() && hp.gamma >= 0.0) {
        return Err(Error::input(format!("gamma {} must be >= 0", hp.gamma)));
    }
    if !(hp.learning_rate.is_finite() && hp.learning_rate > 0.0) || hp.batch_size == 0 {
        return Err(Error::input("learning rate and batch size must be positive"));
    }

    let (mean, std) = data.utility_stats();
    let targets: Vec<f64> = data.utilities().iter().map(|u| (u - mean) / std).collect();
    let width = data.width();
    let n_params = width + 1;

    let mut params = vec![0.0f64; n_params];
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut grad = vec![0.0f64; n_params];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &k in batch {
                let row = data.row(k);
                let residual = predict(&params, row) - targets[k];
                grad[0] += scale * residual;
                for (g, &x) in grad[1..].iter_mut().zip(row) {
                    *g += scale * residual * x;
                }
            }
            for (g, &b) in grad[1..].iter_mut().zip(&params[1..]) {
                *g += match hp.penalty {
                    Penalty::L1 => hp.gamma * signum(b),
                    Penalty::L2 => 2.0 * hp.gamma * b,
                };
            }
            step += 1;
            let bc1 = 1.0 - libm::pow(ADAM_BETA1, step as f64);
            let bc2 = 1.0 - libm::pow(ADAM_BETA2, step as f64);
            for i in 0..n_params {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= hp.learning_rate * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
            }
        }
        let loss = objective(data, &targets, &params, hp);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::numeric(
                None,
                format!("regression diverged at epoch {epoch} (loss {loss})"),
            ));
        }
    }

    Ok(RelevanceScores {
        columns: data.columns.clone(),
        beta: params[1..].iter().map(|b| b * std).collect(),
        intercept: mean + std * params[0],
        hyper: *hp,
        validation_tau: None,
        utility_mean: mean,
        utility_std: std,
    })
}

#[inline]
fn predict(params: &[f64], row: &[f64]) -> f64 {
    params[0] + params[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

#[inline]
fn signum(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn objective(data: &EvalDataset, targets: &[f64], params: &[f64], hp: &HyperPoint) -> f64 {
    let mse = (0..data.len())
        .map(|k| {
            let r = predict(params, data.row(k)) - targets[k];
            r * r
        })
        .sum::<f64>()
        / data.len() as f64;
    let penalty: f64 = match hp.penalty {
        Penalty::L1 => params[1..].iter().map(|b| b.abs()).sum(),
        Penalty::L2 => params[1..].iter().map(|b| b * b).sum(),
    };
    mse + hp.gamma * penalty
}
