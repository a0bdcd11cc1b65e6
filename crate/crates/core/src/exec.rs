//! Execution helpers for data-parallel inner loops.
//!
//! Trials and per-round client updates are independent, so they map cleanly
//! onto a rayon pool. `map_indexed` picks the parallel path when the
//! `parallel` feature is enabled and falls back to a plain loop otherwise;
//! both produce results in index order, so outputs are identical either way.
//! `map_indexed_serial` is always available for benchmarking the two paths
//! against each other.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to each index in `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference path with the same contract as [`map_indexed`].
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
