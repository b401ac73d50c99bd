//! Pluggable data-parallel execution.
//!
//! Every parallel loop in the crate is phrased as work over fixed-size
//! chunks whose boundaries do not depend on the number of workers, and
//! per-chunk results come back in chunk order. Reductions folded from those
//! results are therefore bit-identical no matter how the chunks were
//! scheduled.

use alloc::vec::Vec;
use core::ops::Range;

/// Nodes per work item used by the solver and the reports.
pub const NODE_CHUNK: usize = 4096;

pub trait Executor: Sync {
    /// Runs `job(offset, chunk)` over consecutive `chunk_len`-sized pieces of
    /// `out` (the last one may be shorter). `offset` is the position of the
    /// chunk's first element in `out`. Results are returned in chunk order.
    fn for_each_chunk<E, T, F>(&self, out: &mut [E], chunk_len: usize, job: F) -> Vec<T>
    where
        E: Send,
        T: Send,
        F: Fn(usize, &mut [E]) -> T + Sync;

    /// Runs `job` over the ranges `[0, chunk_len)`, `[chunk_len, 2 chunk_len)`, …
    /// covering `0..len`, returning results in range order.
    fn map_ranges<T, F>(&self, len: usize, chunk_len: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync;

    fn workers(&self) -> usize {
        1
    }
}

/// Runs everything on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Serial;

impl Executor for Serial {
    fn for_each_chunk<E, T, F>(&self, out: &mut [E], chunk_len: usize, job: F) -> Vec<T>
    where
        E: Send,
        T: Send,
        F: Fn(usize, &mut [E]) -> T + Sync,
    {
        let chunk_len = chunk_len.max(1);
        out.chunks_mut(chunk_len)
            .enumerate()
            .map(|(k, chunk)| job(k * chunk_len, chunk))
            .collect()
    }

    fn map_ranges<T, F>(&self, len: usize, chunk_len: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        chunk_ranges(len, chunk_len).map(job).collect()
    }
}

/// The ranges visited by [`Executor::map_ranges`].
pub fn chunk_ranges(len: usize, chunk_len: usize) -> impl Iterator<Item = Range<usize>> {
    let chunk_len = chunk_len.max(1);
    (0..len.div_ceil(chunk_len)).map(move |k| k * chunk_len..((k + 1) * chunk_len).min(len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn serial_chunks_report_offsets() {
        let mut out = vec![0usize; 10];
        let offsets = Serial.for_each_chunk(&mut out, 4, |offset, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                *slot = offset + k;
            }
            offset
        });
        assert_eq!(offsets, vec![0, 4, 8]);
        assert_eq!(out, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ranges_cover_exactly() {
        let ranges: Vec<_> = chunk_ranges(7, 3).collect();
        assert_eq!(ranges, vec![0..3, 3..6, 6..7]);
        assert_eq!(chunk_ranges(0, 3).count(), 0);
    }
}
