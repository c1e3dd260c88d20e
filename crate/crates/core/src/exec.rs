//! Data-parallel helpers with a deterministic reduction order.
//!
//! Work is always cut into fixed-size chunks whose boundaries depend only on
//! the problem size, never on the thread count. Chunks are evaluated in
//! parallel (when the `parallel` feature is on and more than one worker is
//! available) and their partial results are folded left-to-right, so the
//! floating-point result is bit-identical for any worker count.

use std::ops::Range;

/// Number of items per chunk for index-range maps.
pub const CHUNK: usize = 256;

/// Runs `f` with a pool of `workers` threads. With the `parallel` feature
/// disabled this simply calls `f`.
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("failed to build thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Worker count of the current context.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Maps every chunk of `0..n` through `f`, returning the chunk results in
/// index order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(n, chunk);
    #[cfg(feature = "parallel")]
    {
        if current_workers() > 1 && ranges.len() > 1 {
            use rayon::prelude::*;
            return ranges.into_par_iter().map(f).collect();
        }
    }
    ranges.into_iter().map(f).collect()
}

/// Maps every index of `0..n` through `f`, preserving order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks(n, CHUNK, |r| r.map(&f).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Sums `f(i)` over `0..n`. Each chunk is summed sequentially and the
/// chunk sums are added in index order.
pub fn sum_indices<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(n, CHUNK, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_exactly() {
        let r = chunk_ranges(1000, 256);
        assert_eq!(r.len(), 4);
        assert_eq!(r[3], 768..1000);
        assert!(chunk_ranges(0, 256).is_empty());
    }

    #[test]
    fn sums_are_identical_across_worker_counts() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let one = with_workers(1, || sum_indices(10_000, f));
        let four = with_workers(4, || sum_indices(10_000, f));
        assert_eq!(one.to_bits(), four.to_bits());
    }

    #[test]
    fn map_indices_preserves_order() {
        let v = with_workers(3, || map_indices(1000, |i| i * 2));
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
