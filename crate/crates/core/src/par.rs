//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the maps below run on the rayon pool; without
//! it they are plain iterator maps. Results are always collected in index
//! order and any reduction happens afterwards, sequentially, so the two
//! builds produce bitwise-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Smallest number of items handed to one rayon task; per-knot work is tiny.
#[cfg(feature = "parallel")]
const MIN_LEN: usize = 16;

#[cfg(feature = "parallel")]
fn single_thread() -> bool {
    rayon::current_num_threads() == 1
}

/// Map `f` over `0..len`, collecting results in index order.
pub fn map_range<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if single_thread() {
            return (0..len).map(f).collect();
        }
        (0..len).into_par_iter().with_min_len(MIN_LEN).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Map `f` over a slice, collecting results in order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if single_thread() {
            return items.iter().map(f).collect();
        }
        items.par_iter().with_min_len(MIN_LEN).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Fill fixed-size chunks of `out` in parallel; chunk `i` is written by `f(i, chunk)`.
pub fn for_each_chunk<F>(out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if single_thread() {
            out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        out.par_chunks_mut(chunk)
            .enumerate()
            .with_min_len(MIN_LEN)
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Whether this build dispatches onto the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
