use rayon::prelude::*;

use crate::error::{Error, Result};

/// Worker-count setting shared by the experiment drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workers(usize);

impl Workers {
    pub fn new(n: usize) -> Self {
        Self(n.max(1))
    }

    pub fn available() -> Self {
        Self::new(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    pub fn get(&self) -> usize {
        self.0
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::available()
    }
}

/// Runs `f(0..n)` on `workers` threads and returns the results in index
/// order. Aggregation happens afterwards on the caller's side, so results do
/// not depend on the worker count.
pub fn map_indexed<T, F>(workers: Workers, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers.get() == 1 {
        return (0..n).map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.get())
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect::<Vec<_>>()).into_iter().collect()
}

/// Like [`map_indexed`] but wraps failures with the member index.
pub fn map_members<T, F>(workers: Workers, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(workers, n, |i| f(i).map_err(|e| Error::Member { index: i, source: Box::new(e) }))
}
