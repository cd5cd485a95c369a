//! Orbit-level data parallelism with a sequential fallback.
//!
//! Work is split into fixed chunks whose results are concatenated in chunk order, so the output
//! is identical for any thread count and for the sequential path.

use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise runs sequentially.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Orbits per work item; small enough to balance, large enough to fill the lanes.
pub const CHUNK: u64 = 64;

/// Chunk size giving each worker a few work items; orbits of unequal length drain the lanes
/// at the end of every chunk, so chunks should be as large as load balance allows.
pub fn balanced_chunk(items: u64, exec: Execution) -> u64 {
    let workers = if exec.is_parallel() { threads() as u64 } else { 1 };
    items.div_ceil(4 * workers).clamp(CHUNK, 1 << 14)
}

fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn chunks(items: Range<u64>, chunk: u64) -> Vec<Range<u64>> {
    let chunk = chunk.max(1);
    let mut out = Vec::new();
    let mut a = items.start;
    while a < items.end {
        let b = (a + chunk).min(items.end);
        out.push(a..b);
        a = b;
    }
    out
}

/// Applies `f` to consecutive sub-ranges of `items` and concatenates the results in order.
pub fn map_ranges<T, F>(items: Range<u64>, chunk: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> Vec<T> + Sync + Send,
{
    let parts = chunks(items, chunk);
    let nested: Vec<Vec<T>> = if exec.is_parallel() {
        run_parallel(parts, &f)
    } else {
        parts.into_iter().map(&f).collect()
    };
    nested.into_iter().flatten().collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_ranges(0..n as u64, 16, exec, |r| r.map(|i| f(i as usize)).collect())
}

#[cfg(feature = "parallel")]
fn run_parallel<T, F>(parts: Vec<Range<u64>>, f: &F) -> Vec<Vec<T>>
where
    T: Send,
    F: Fn(Range<u64>) -> Vec<T> + Sync + Send,
{
    use rayon::prelude::*;
    parts.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, F>(parts: Vec<Range<u64>>, f: &F) -> Vec<Vec<T>>
where
    T: Send,
    F: Fn(Range<u64>) -> Vec<T> + Sync + Send,
{
    parts.into_iter().map(f).collect()
}

/// Sets the global worker count; returns false if the pool was already initialised.
pub fn set_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}
