//! Data-parallel building blocks with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the same closures sequentially. Every call site is shaped so both
//! paths produce bit-identical output: chunk boundaries are fixed by the
//! caller, writes are disjoint, and reductions are exact (integer adds).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f` over fixed-size mutable chunks of `data` (last chunk may be
/// short). The chunk index comes first so callers can locate themselves.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Runs `f` over paired fixed-size chunks of a source slice and a mutable
/// destination slice. Both slices must have the same length.
pub fn for_each_chunk_zip<S, D, F>(src: &[S], dst: &mut [D], chunk: usize, f: F)
where
    S: Sync,
    D: Send,
    F: Fn(usize, &[S], &mut [D]) + Send + Sync,
{
    assert_eq!(src.len(), dst.len());
    #[cfg(feature = "parallel")]
    {
        src.par_chunks(chunk)
            .zip(dst.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, (s, d))| f(i, s, d));
    }
    #[cfg(not(feature = "parallel"))]
    {
        src.chunks(chunk)
            .zip(dst.chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, (s, d))| f(i, s, d));
    }
}

/// Maps `f` over `0..n` collecting the results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
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

/// Folds fixed-size chunks of `data` into per-chunk accumulators and merges
/// them. `merge` must be associative and, for cross-build determinism,
/// the fold itself should be order-insensitive (e.g. integer counting).
pub fn fold_chunks<T, A, F, M>(data: &[T], chunk: usize, init: A, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send + Sync + Clone,
    F: Fn(A, &[T]) -> A + Send + Sync,
    M: Fn(A, A) -> A + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks(chunk)
            .fold(|| init.clone(), fold)
            .reduce(|| init.clone(), merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = &merge;
        data.chunks(chunk).fold(init, |acc, c| fold(acc, c))
    }
}
