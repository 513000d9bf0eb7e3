//! Thin execution layer over the data-parallel inner loops. With the
//! `parallel` feature (default) the loops run on rayon; without it they run
//! sequentially with identical results. Every helper writes to disjoint
//! regions or collects in index order, so outputs never depend on the thread
//! count.

/// Produce one value per index, in order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f` to equally sized per-item chunks of three buffers. Chunk `i`
/// covers item `i`; the buffers must be exact multiples of their strides.
pub fn zip3_chunks_mut<A, B, C, F>(
    a: (&mut [A], usize),
    b: (&mut [B], usize),
    c: (&mut [C], usize),
    f: F,
) where
    A: Send,
    B: Send,
    C: Send,
    F: Fn(usize, &mut [A], &mut [B], &mut [C]) + Sync + Send,
{
    debug_assert_eq!(a.0.len() % a.1, 0);
    debug_assert_eq!(a.0.len() / a.1, b.0.len() / b.1);
    debug_assert_eq!(a.0.len() / a.1, c.0.len() / c.1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.0.par_chunks_mut(a.1)
            .zip(b.0.par_chunks_mut(b.1))
            .zip(c.0.par_chunks_mut(c.1))
            .enumerate()
            .for_each(|(i, ((ca, cb), cc))| f(i, ca, cb, cc));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, ((ca, cb), cc)) in a
            .0
            .chunks_mut(a.1)
            .zip(b.0.chunks_mut(b.1))
            .zip(c.0.chunks_mut(c.1))
            .enumerate()
        {
            f(i, ca, cb, cc);
        }
    }
}

/// Fill `out` with `f(i)` for each index. Deterministic: slot `i` only ever
/// holds `f(i)`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
    }
}
