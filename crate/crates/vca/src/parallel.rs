//! Data-parallel helpers. With the `parallel` feature (default) work is
//! distributed with rayon; without it the same helpers run sequentially, so
//! callers are agnostic to the mode. Results are ordered by input index in
//! both modes, so output never depends on work partitioning.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
pub(crate) fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Map `f` over index ranges `[start, end)` chunking `0..n` by `chunk`.
pub(crate) fn map_chunks<U, F>(n: usize, chunk: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let ranges: Vec<_> = (0..n)
        .step_by(chunk.max(1))
        .map(|s| s..(s + chunk).min(n))
        .collect();
    map_collect(ranges, f)
}
