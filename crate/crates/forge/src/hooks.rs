use std::num::NonZeroUsize;
use std::thread;
use std::time::Instant;

use bonsai_core::catalog::SubModelMask;
use bonsai_core::engine::ModelBundle;
use bonsai_core::eval::{utility_on, UtilityReport};
use bonsai_core::pruner::RunHooks;

/// Evaluates each batch of masks on scoped worker threads and times
/// iterations with a monotonic clock.
pub struct ThreadedHooks {
    threads: usize,
    origin: Instant,
}

impl ThreadedHooks {
    /// `threads = 0` uses the available parallelism.
    pub fn new(threads: usize) -> Self {
        let threads = if threads == 0 {
            thread::available_parallelism().map_or(1, NonZeroUsize::get)
        } else {
            threads
        };
        Self { threads, origin: Instant::now() }
    }
}

impl RunHooks for ThreadedHooks {
    fn now_ms(&mut self) -> Option<f64> {
        Some(self.origin.elapsed().as_secs_f64() * 1e3)
    }

    fn evaluate(
        &mut self,
        model: &ModelBundle,
        chunks: &[&[u32]],
        masks: &[SubModelMask],
    ) -> bonsai_core::Result<Vec<UtilityReport>> {
        if self.threads <= 1 || masks.len() < 2 {
            return masks.iter().map(|m| utility_on(model, chunks.iter().copied(), Some(m))).collect();
        }
        let per = masks.len().div_ceil(self.threads);
        thread::scope(|s| {
            let workers: Vec<_> = masks
                .chunks(per)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|m| utility_on(model, chunks.iter().copied(), Some(m)))
                            .collect::<bonsai_core::Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(masks.len());
            for w in workers {
                out.extend(w.join().expect("mask evaluation thread panicked")?);
            }
            Ok(out)
        })
    }
}
