//! Single-threaded latency measurement of full-chunk forward passes.

use std::time::{Duration, Instant};

use bonsai_core::engine::{forward, ModelBundle};
use bonsai_core::eval::Corpus;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const DEFAULT_WARMUP: usize = 3;

/// A chunk must take this many timer ticks to be measured meaningfully.
const MIN_TICKS_PER_CHUNK: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub label: String,
    pub chunk_len: usize,
    /// Sequences per forward pass; always 1.
    pub batch_size: usize,
    pub warmup: usize,
    pub chunk_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub tokens_per_second: f64,
    pub baseline: Option<String>,
    pub baseline_mean_ms: Option<f64>,
    pub speedup: Option<f64>,
}

impl LatencyReport {
    fn from_times(label: &str, chunk_len: usize, warmup: usize, chunk_ms: Vec<f64>) -> Self {
        let n = chunk_ms.len();
        let mut sorted = chunk_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let total: f64 = chunk_ms.iter().sum();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let p95_rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            label: label.to_string(),
            chunk_len,
            batch_size: 1,
            warmup,
            mean_ms: total / n as f64,
            median_ms,
            p95_ms: sorted[p95_rank - 1],
            tokens_per_second: (chunk_len * n) as f64 / (total / 1e3),
            chunk_ms,
            baseline: None,
            baseline_mean_ms: None,
            speedup: None,
        }
    }

    /// Sets `speedup = baseline.mean_ms / self.mean_ms`.
    pub fn with_baseline(mut self, baseline: &LatencyReport) -> Self {
        self.baseline = Some(baseline.label.clone());
        self.baseline_mean_ms = Some(baseline.mean_ms);
        self.speedup = Some(baseline.mean_ms / self.mean_ms);
        self
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..16 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min(now - start);
    }
    best
}

/// Times `chunk_count` forward passes after `warmup` untimed ones, cycling
/// through the corpus chunks.
pub fn bench(
    model: &ModelBundle,
    corpus: &Corpus,
    chunk_count: usize,
    warmup: usize,
    label: &str,
) -> Result<LatencyReport> {
    if chunk_count == 0 {
        return Err(ForgeError::Input("bench needs at least one timed chunk".into()));
    }
    corpus.check_compatible(model.config())?;
    let chunk = |i: usize| {
        let c = corpus.chunk(i % corpus.chunk_count());
        &c[..c.len().min(model.config().max_seq_len)]
    };
    for i in 0..warmup {
        forward(model, chunk(i), None)?;
    }
    let floor = timer_resolution() * MIN_TICKS_PER_CHUNK;
    let mut times = Vec::with_capacity(chunk_count);
    for i in 0..chunk_count {
        let tokens = chunk(warmup + i);
        let start = Instant::now();
        let logits = forward(model, tokens, None)?;
        let elapsed = start.elapsed();
        std::hint::black_box(logits);
        if elapsed < floor {
            return Err(ForgeError::Input(format!(
                "chunk took {elapsed:?}, below {floor:?} of timer resolution; use longer chunks"
            )));
        }
        times.push(elapsed.as_secs_f64() * 1e3);
    }
    let chunk_len = chunk(0).len();
    Ok(LatencyReport::from_times(label, chunk_len, warmup, times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let r = LatencyReport::from_times("x", 10, 0, vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(r.mean_ms, 2.5);
        assert_eq!(r.median_ms, 2.5);
        assert_eq!(r.p95_ms, 4.0);
        assert_eq!(r.tokens_per_second, 40.0 / 0.01);
        let s = LatencyReport::from_times("y", 10, 0, vec![5.0; 3]).with_baseline(&r);
        assert_eq!(s.speedup, Some(0.5));
        assert_eq!(s.baseline.as_deref(), Some("x"));
    }

    #[test]
    fn p95_uses_nearest_rank() {
        let times: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(LatencyReport::from_times("x", 1, 0, times).p95_ms, 19.0);
    }
}
