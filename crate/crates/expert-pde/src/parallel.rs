//! Rayon-backed [`Executor`].

use std::ops::Range;

use expert_pde_core::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Overrides the worker count when `--threads` is not given.
pub const THREADS_ENV: &str = "EXPERT_PDE_THREADS";

/// A dedicated thread pool. Chunk boundaries come from the caller, so
/// results match [`expert_pde_core::Serial`] bit for bit.
#[derive(Debug)]
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    /// `None` means one worker per available core.
    pub fn new(threads: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut builder = ThreadPoolBuilder::new().thread_name(|i| format!("expert-pde-{i}"));
        if let Some(n) = threads {
            builder = builder.num_threads(n.max(1));
        }
        Ok(Self { pool: builder.build()? })
    }

    /// Worker count from the flag, then the environment, then the machine.
    pub fn from_env(flag: Option<usize>) -> anyhow::Result<Self> {
        let threads = match flag {
            Some(n) => Some(n),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => Some(v.trim().parse().map_err(|e| anyhow::anyhow!("{THREADS_ENV}={v:?}: {e}"))?),
                Err(_) => None,
            },
        };
        Ok(Self::new(threads)?)
    }
}

impl Executor for Parallel {
    fn for_each_chunk<E, T, F>(&self, out: &mut [E], chunk_len: usize, job: F) -> Vec<T>
    where
        E: Send,
        T: Send,
        F: Fn(usize, &mut [E]) -> T + Sync,
    {
        let chunk_len = chunk_len.max(1);
        self.pool.install(|| {
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .map(|(k, chunk)| job(k * chunk_len, chunk))
                .collect()
        })
    }

    fn map_ranges<T, F>(&self, len: usize, chunk_len: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        let chunk_len = chunk_len.max(1);
        self.pool.install(|| {
            (0..len.div_ceil(chunk_len))
                .into_par_iter()
                .map(|k| job(k * chunk_len..((k + 1) * chunk_len).min(len)))
                .collect()
        })
    }

    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use expert_pde_core::exec::chunk_ranges;
    use expert_pde_core::Serial;

    #[test]
    fn chunks_match_serial() {
        let p = Parallel::new(Some(3)).unwrap();
        assert_eq!(p.workers(), 3);
        let mut a = vec![0usize; 10_001];
        let mut b = a.clone();
        let ra = p.for_each_chunk(&mut a, 97, |off, c| {
            c.iter_mut().enumerate().for_each(|(i, x)| *x = off + i);
            off
        });
        let rb = Serial.for_each_chunk(&mut b, 97, |off, c| {
            c.iter_mut().enumerate().for_each(|(i, x)| *x = off + i);
            off
        });
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let ranges: Vec<_> = chunk_ranges(10_001, 97).collect();
        assert_eq!(p.map_ranges(10_001, 97, |r| r), ranges);
    }
}
