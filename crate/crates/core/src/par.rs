//! Data-parallel helpers with a sequential fallback.
//!
//! The `parallel` feature (on by default) routes these through rayon. Every
//! call site preserves output order and computes each element independently,
//! so results are bit-identical with the feature on or off, and independent
//! of the thread count. The `*_seq` variants are always available; benches
//! compare the two.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether the build dispatches to the parallel implementations.
pub const fn parallelism_enabled() -> bool {
    cfg!(feature = "parallel")
}

pub fn map_indexed_seq<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync) -> Vec<U> {
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(feature = "parallel")]
pub fn map_indexed_par<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync) -> Vec<U> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Order-preserving map over a slice.
pub fn map_indexed<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> U + Sync) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        map_indexed_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(items, f)
    }
}

pub fn map_range_seq<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range_par<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        map_range_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_range_seq(n, f)
    }
}

/// Runs `f` for each disjoint output row chunk. `chunk_rows` rows per chunk.
/// Each chunk writes only to its own slice, so the result does not depend on
/// scheduling.
pub fn for_each_row_chunk(
    data: &mut [f64],
    row_len: usize,
    chunk_rows: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    debug_assert!(row_len > 0 && data.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_rows * row_len)
            .enumerate()
            .for_each(|(ci, chunk)| f(ci * chunk_rows, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_rows * row_len)
            .enumerate()
            .for_each(|(ci, chunk)| f(ci * chunk_rows, chunk));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_variants_agree() {
        let xs: Vec<u64> = (0..257).collect();
        let seq = map_indexed_seq(&xs, |i, x| (i as u64) * 31 + x * x);
        let dispatched = map_indexed(&xs, |i, x| (i as u64) * 31 + x * x);
        assert_eq!(seq, dispatched);

        let r_seq = map_range_seq(100, |i| i * 7);
        let r = map_range(100, |i| i * 7);
        assert_eq!(r_seq, r);
    }
}
