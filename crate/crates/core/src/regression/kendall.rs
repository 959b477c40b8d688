use alloc::format;

use crate::error::{Error, Result};

/// Kendall rank correlation, tau-b variant.
///
/// `tau = (C − D) / sqrt((C + D + Tₐ)(C + D + T_b))` where `Tₐ`/`T_b` count
/// pairs tied in only one sequence. A sequence without any strict order
/// (e.g. constant) yields 0.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "kendall_tau: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::input("kendall_tau needs at least two observations"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::input("kendall_tau: non-finite value"));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            match (da == 0.0, db == 0.0) {
                (true, true) => {}
                (true, false) => ties_a += 1,
                (false, true) => ties_b += 1,
                (false, false) => {
                    if (da > 0.0) == (db > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let base = (concordant + discordant) as f64;
    let denom = libm::sqrt((base + ties_a as f64) * (base + ties_b as f64));
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}
