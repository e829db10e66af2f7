//! Row-parallel execution inside one rank.
//!
//! Filters compute their output one row at a time through [`fill_rows`].
//! Each row depends only on the input buffers and its own coordinates, so
//! the parallel and sequential paths produce bitwise-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a rank runs a filter's inner loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parallelism {
    Sequential,
    /// Rows are spread over the rayon thread pool. Falls back to sequential
    /// when the crate is built without the `parallel` feature.
    Rows,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rows
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    /// What this build actually does when asked for `self`.
    pub fn effective(self) -> Parallelism {
        if cfg!(feature = "parallel") {
            self
        } else {
            Parallelism::Sequential
        }
    }
}

/// Calls `row_fn(row_index, row)` for each `row_len`-long chunk of `out`.
pub fn fill_rows<T, F>(out: &mut [T], row_len: usize, mode: Parallelism, row_fn: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    match mode.effective() {
        #[cfg(feature = "parallel")]
        Parallelism::Rows => out
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| row_fn(i, row)),
        _ => out
            .chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| row_fn(i, row)),
    }
}
