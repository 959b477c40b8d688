//! Dense building blocks for the decoder forward pass.
//!
//! All kernels compute in `f32`; reductions that feed the loss accumulate
//! in `f64`.

use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::input(format!(
            "matmul shape mismatch: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    let bs = b.as_slice();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = &bs[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`, used for the tied output head.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::input(format!(
            "matmul_bt shape mismatch: {:?} x {:?}ᵀ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    }))
}

/// Numerically stable softmax applied to each row in place.
pub fn rows_softmax(x: &mut Matrix) {
    for r in 0..x.rows() {
        softmax_in_place(x.row_mut(r));
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !max.is_finite() {
        // fully masked row: leave as zeros
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `x / sqrt(mean(x²) + eps) * scale`, row-wise.
pub fn rms_norm(x: &Matrix, scale: &[f32], eps: f32) -> Result<Matrix> {
    if scale.len() != x.cols() {
        return Err(Error::input(format!(
            "rms_norm scale has {} entries, rows have {}",
            scale.len(),
            x.cols()
        )));
    }
    let mut out = x.clone();
    let width = x.cols() as f32;
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|v| v * v).sum::<f32>() / width;
        let inv = 1.0 / libm::sqrtf(ms + eps);
        for (v, s) in row.iter_mut().zip(scale) {
            *v = *v * inv * s;
        }
    }
    Ok(out)
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

/// `silu(gate) ⊙ up`
pub fn silu_gate(gate: &Matrix, up: &Matrix) -> Result<Matrix> {
    if gate.shape() != up.shape() {
        return Err(Error::input(format!(
            "silu_gate shape mismatch: {:?} vs {:?}",
            gate.shape(),
            up.shape()
        )));
    }
    let mut out = gate.clone();
    for (g, u) in out.as_mut_slice().iter_mut().zip(up.as_slice()) {
        *g = silu(*g) * u;
    }
    Ok(out)
}

/// Rotates adjacent channel pairs of every head by `pos · base^(-2i/head_dim)`.
///
/// Row `t` of `x` is position `t`. An odd trailing channel is left untouched.
pub fn rotary_embed(x: &mut Matrix, head_dim: usize, base: f32) -> Result<()> {
    if head_dim == 0 || !x.cols().is_multiple_of(head_dim) {
        return Err(Error::input(format!(
            "rotary_embed: width {} is not a multiple of head_dim {head_dim}",
            x.cols()
        )));
    }
    let heads = x.cols() / head_dim;
    let half = head_dim / 2;
    for pos in 0..x.rows() {
        let row = x.row_mut(pos);
        for i in 0..half {
            let freq = libm::powf(base, -2.0 * i as f32 / head_dim as f32);
            let angle = pos as f32 * freq;
            let (sin, cos) = (libm::sinf(angle), libm::cosf(angle));
            for h in 0..heads {
                let a = h * head_dim + 2 * i;
                let (x0, x1) = (row[a], row[a + 1]);
                row[a] = x0 * cos - x1 * sin;
                row[a + 1] = x0 * sin + x1 * cos;
            }
        }
    }
    Ok(())
}

/// Mean over positions of `-log softmax(logits)[target]`.
pub fn mean_cross_entropy(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if logits.rows() != targets.len() || targets.is_empty() {
        return Err(Error::input(format!(
            "mean_cross_entropy: {} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let mut total = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let t = t as usize;
        if t >= row.len() {
            return Err(Error::input(format!(
                "target {t} outside vocabulary of {}",
                row.len()
            )));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max
            + libm::log(
                row.iter()
                    .map(|&v| libm::exp(v as f64 - max))
                    .sum::<f64>(),
            );
        total += lse - row[t] as f64;
    }
    Ok(total / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let mut m = Matrix::zeros(1, 4);
        rows_softmax(&mut m);
        assert!(m.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn rms_norm_hand_value() {
        let x = Matrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        let y = rms_norm(&x, &[1.0, 1.0], 1e-6).unwrap();
        let denom = libm::sqrt(12.5 + 1e-6);
        assert!((y.get(0, 0) as f64 - 3.0 / denom).abs() < 1e-6);
        assert!((y.get(0, 1) as f64 - 4.0 / denom).abs() < 1e-6);
        assert!((y.get(0, 0) - 0.8485).abs() < 1e-4);
        assert!((y.get(0, 1) - 1.1314).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let logits = Matrix::zeros(5, 32);
        let ce = mean_cross_entropy(&logits, &[0, 3, 7, 31, 2]).unwrap();
        assert!((ce - libm::log(32.0)).abs() < 1e-12);
        assert!((ce - 3.4657).abs() < 1e-4);
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::new(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[17.0, 39.0]);
        assert_eq!(matmul_bt(&a, &a).unwrap().as_slice(), &[5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Input(_))));
        assert!(matches!(rms_norm(&a, &[1.0], 1e-6), Err(Error::Input(_))));
        assert!(matches!(
            silu_gate(&a, &Matrix::zeros(3, 2)),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            mean_cross_entropy(&a, &[0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rotary_position_zero_is_identity_and_preserves_norm() {
        let mut x = Matrix::from_fn(3, 8, |r, c| (r * 8 + c) as f32 * 0.1 - 1.0);
        let orig = x.clone();
        rotary_embed(&mut x, 4, 10_000.0).unwrap();
        assert_eq!(x.row(0), orig.row(0));
        for r in 0..3 {
            let n0: f32 = orig.row(r).iter().map(|v| v * v).sum();
            let n1: f32 = x.row(r).iter().map(|v| v * v).sum();
            assert!((n0 - n1).abs() < 1e-4);
        }
    }
}
