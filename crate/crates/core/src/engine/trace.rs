use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Running absolute and squared sums along a module axis.
///
/// Each observed row contributes `group` samples to every module, so an
/// attention head of width `head_dim` pools its channels into the sample
/// axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AxisStats {
    abs_sum: Vec<f64>,
    sq_sum: Vec<f64>,
    count: u64,
}

impl AxisStats {
    pub fn new(modules: usize) -> Self {
        Self {
            abs_sum: vec![0.0; modules],
            sq_sum: vec![0.0; modules],
            count: 0,
        }
    }

    /// Builds statistics from a `samples × modules` row-major matrix.
    pub fn from_samples(samples: &[f32], modules: usize) -> Result<Self> {
        let mut stats = Self::new(modules);
        stats.observe(samples, 1)?;
        Ok(stats)
    }

    pub fn modules(&self) -> usize {
        self.abs_sum.len()
    }

    /// Samples seen per module.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Folds in rows of width `modules × group`.
    pub fn observe(&mut self, rows: &[f32], group: usize) -> Result<()> {
        let width = self.modules() * group;
        if width == 0 || !rows.len().is_multiple_of(width) {
            return Err(Error::input(format!(
                "activation buffer of {} values does not tile rows of width {width}",
                rows.len()
            )));
        }
        for row in rows.chunks_exact(width) {
            for (m, chunk) in row.chunks_exact(group).enumerate() {
                for &v in chunk {
                    let v = v as f64;
                    self.abs_sum[m] += v.abs();
                    self.sq_sum[m] += v * v;
                }
            }
        }
        self.count += (rows.len() / width * group) as u64;
        Ok(())
    }

    pub fn mean_abs(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.abs_sum.iter().map(|s| s / n).collect()
    }

    pub fn rms(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sq_sum.iter().map(|s| libm::sqrt(s / n)).collect()
    }
}

/// Activation statistics of one layer, taken just before each output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Pre-O-projection attention output, module axis = heads.
    pub attention: AxisStats,
    /// Gated FFN intermediate, module axis = FFN dims.
    pub ffn: AxisStats,
}

/// Per-call capture of the activations the priors are computed from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationTrace {
    pub layers: Vec<LayerTrace>,
    /// Sequences folded in.
    pub sequences: u64,
    /// Token positions folded in.
    pub positions: u64,
}

impl ActivationTrace {
    pub fn is_empty(&self) -> bool {
        self.positions == 0
    }
}
