//! Thin parallelism shims.
//!
//! Every parallel site in the crate maps independent work items to
//! independent outputs and merges in a fixed order, so results are
//! bit-identical whether the `parallel` feature is on or off and for any
//! thread count.

#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk_mut<T: Send, F: Fn(usize, &mut [T]) + Send + Sync>(
    data: &mut [T],
    chunk: usize,
    f: F,
) {
    use rayon::prelude::*;
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk_mut<T, F: Fn(usize, &mut [T])>(data: &mut [T], chunk: usize, f: F) {
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Map fixed-size chunks of `data` to fresh values; the output order is the
/// chunk order regardless of scheduling.
#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T: Sync, R: Send, F: Fn(usize, &[T]) -> R + Send + Sync>(
    data: &[T],
    chunk: usize,
    f: F,
) -> alloc::vec::Vec<R> {
    use rayon::prelude::*;
    data.par_chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, R, F: Fn(usize, &[T]) -> R>(
    data: &[T],
    chunk: usize,
    f: F,
) -> alloc::vec::Vec<R> {
    data.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Run `f(i)` for i in 0..n, collecting results in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_indices<R: Send, F: Fn(usize) -> R + Send + Sync>(
    n: usize,
    f: F,
) -> alloc::vec::Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<R, F: Fn(usize) -> R>(n: usize, f: F) -> alloc::vec::Vec<R> {
    (0..n).map(f).collect()
}
