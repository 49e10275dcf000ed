//! Data-parallel mapping over batches.
//!
//! With the `parallel` feature (default) the work is spread over the rayon
//! pool; without it the same code runs sequentially. Results are always
//! collected in index order and any reduction happens sequentially
//! afterwards, so numeric output is bit-identical regardless of thread
//! count or feature selection.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential map, kept as the explicit baseline for benchmarks.
pub fn map_seq<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Parallel map over the rayon pool; only compiled with the `parallel`
/// feature.
#[cfg(feature = "parallel")]
pub fn map_par<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

/// Map over a batch using the configured execution mode.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    map_par(items, f)
}

/// Map over a batch using the configured execution mode.
#[cfg(not(feature = "parallel"))]
pub fn map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    map_seq(items, f)
}

/// Index-order map over `0..n`.
pub fn map_range<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, |&i| f(i))
}
