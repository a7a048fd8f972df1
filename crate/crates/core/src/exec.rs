//! Chunked data-parallel loops with a sequential fallback.
//!
//! Every reduction in the crate goes through fixed-size chunks whose partial
//! results are combined in index order, so parallel and sequential runs agree
//! bit for bit. Without the `parallel` feature [`Execution::Parallel`] quietly
//! runs on the calling thread.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the Monte Carlo reductions.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True when this build can actually run work on a thread pool.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn use_pool(self) -> bool {
        self == Execution::Parallel && Self::parallel_available()
    }

    /// Applies `f` to `0..len` split into consecutive ranges of `chunk`
    /// indices and returns the results in range order.
    pub fn map_chunks<T, F>(self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let count = len.div_ceil(chunk);
        let range = move |k: usize| k * chunk..((k + 1) * chunk).min(len);
        #[cfg(feature = "parallel")]
        if self.use_pool() {
            return (0..count).into_par_iter().map(|k| f(range(k))).collect();
        }
        (0..count).map(|k| f(range(k))).collect()
    }

    /// Calls `f(offset, slice)` on consecutive mutable chunks of `data`,
    /// where `offset` is the index of the chunk's first element.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.use_pool() {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(k, s)| f(k * chunk, s));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(k, s)| f(k * chunk, s));
    }

    /// `(0..len).map(f)` with one task per index.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.use_pool() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_every_index_once() {
        for exec in [Execution::Parallel, Execution::Sequential] {
            let ranges = exec.map_chunks(10, 4, |r| r);
            assert_eq!(ranges, vec![0..4, 4..8, 8..10]);
            assert!(exec.map_chunks(0, 4, |r| r).is_empty());
        }
    }

    #[test]
    fn modes_agree_bitwise_on_float_sums() {
        let data: Vec<f64> = (0..50_000).map(|i| ((i as f64) * 0.37).sin() / 7.0).collect();
        let sum = |exec: Execution| {
            exec.map_chunks(data.len(), CHUNK, |r| data[r].iter().sum::<f64>())
                .into_iter()
                .sum::<f64>()
        };
        assert_eq!(sum(Execution::Parallel).to_bits(), sum(Execution::Sequential).to_bits());
    }

    #[test]
    fn chunk_mut_passes_offsets() {
        let mut v = vec![0usize; 11];
        Execution::Parallel.for_each_chunk_mut(&mut v, 3, |off, s| {
            for (j, x) in s.iter_mut().enumerate() {
                *x = off + j;
            }
        });
        assert_eq!(v, (0..11).collect::<Vec<_>>());
        assert_eq!(Execution::Sequential.map_indexed(4, |i| i * i), vec![0, 1, 4, 9]);
    }
}
