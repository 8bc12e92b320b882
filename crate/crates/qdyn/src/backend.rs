//! Batch-sharded gradients on scoped threads.

use qdyn_core::data::WindowedSample;
use qdyn_core::trainer::{GradientBackend, SerialBackend};
use qdyn_core::transformer::TransformerForecaster;
use qdyn_core::{Gradients, Result};

/// Splits each batch into `jobs` contiguous shards and reduces the shard
/// sums in shard order, so results depend on `jobs` but not on scheduling.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedBackend {
    pub jobs: usize,
}

impl GradientBackend for ThreadedBackend {
    fn loss_and_grad(
        &self,
        model: &TransformerForecaster,
        batch: &[&WindowedSample],
    ) -> Result<(f64, Gradients)> {
        let jobs = self.jobs.clamp(1, batch.len().max(1));
        if jobs == 1 {
            return SerialBackend.loss_and_grad(model, batch);
        }
        let shard = batch.len().div_ceil(jobs);
        let parts: Vec<Result<(f64, Gradients, usize)>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(shard)
                .map(|chunk| {
                    s.spawn(move || {
                        let (l, g) = model.loss_and_grad(chunk.iter().copied())?;
                        Ok((l, g, chunk.len()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        });
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut total: Option<Gradients> = None;
        for part in parts {
            let (l, g, len) = part?;
            let w = len as f64 / n;
            loss += l * w;
            match total.as_mut() {
                None => {
                    total = Some(g.into_iter().map(|(k, t)| (k, t.scale(w))).collect());
                }
                Some(acc) => {
                    for (k, t) in g {
                        let a = acc.get_mut(&k).expect("shards share parameter names");
                        a.add_assign(&t.scale(w))?;
                    }
                }
            }
        }
        Ok((loss, total.expect("at least one shard")))
    }
}

/// Serial when deterministic or single-job, threaded otherwise.
pub fn select(jobs: usize, deterministic: bool) -> Box<dyn GradientBackend + Sync> {
    if deterministic || jobs <= 1 {
        Box::new(SerialBackend)
    } else {
        Box::new(ThreadedBackend { jobs })
    }
}
