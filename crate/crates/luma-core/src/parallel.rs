//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops in this crate iterate over independent images (batch
//! elements) or independent output rows. The helpers below run those loops on
//! rayon when the `parallel` feature is enabled (the default) and as plain
//! sequential loops otherwise. Each work item writes only its own slot and the
//! reduction order is fixed, so results are bitwise identical across both
//! modes and any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to every chunk of `chunk_len` consecutive elements of `data`,
/// passing the chunk index. Chunks are disjoint, so this is safe to run in
/// parallel.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    }
}

/// Map `f` over `0..n`, collecting results in index order.
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

/// Fold per-index results into an accumulator in a fixed (index) order.
///
/// `f` runs in parallel; the sequential fold keeps floating-point reduction
/// order deterministic.
pub fn map_reduce_ordered<T, A, F, R>(n: usize, f: F, init: A, reduce: R) -> A
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    R: FnMut(A, T) -> A,
{
    map_indexed(n, f).into_iter().fold(init, reduce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_writes_cover_all_slots() {
        let mut v = vec![0usize; 10];
        for_each_chunk_mut(&mut v, 3, |i, chunk| {
            for x in chunk.iter_mut() {
                *x = i + 1;
            }
        });
        assert_eq!(v, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(5, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn reduction_order_is_fixed() {
        // Catastrophic-cancellation probe: order changes would change the sum.
        let a = map_reduce_ordered(100, |i| (i as f64).sin() * 1e10, 0.0, |acc, x| acc + x);
        let b = map_reduce_ordered(100, |i| (i as f64).sin() * 1e10, 0.0, |acc, x| acc + x);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
