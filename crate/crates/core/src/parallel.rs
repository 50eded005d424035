//! Index-ordered parallel maps. Output order, and therefore every reduction
//! built on it, is independent of the worker count.

use rayon::prelude::*;

use crate::error::Result;

/// Evaluate `f(0..n)` on `workers` threads and return the results in index
/// order. On failure the error of the lowest failing index is returned.
pub fn map_indexed<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = if workers <= 1 {
        (0..n).map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}
