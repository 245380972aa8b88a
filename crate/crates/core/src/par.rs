//! Per-point execution helpers.
//!
//! With the `parallel` feature (default) per-point loops run on rayon; without
//! it, or inside [`sequential`], they run on the calling thread. Every kernel in
//! the crate writes each point's output independently, and every reduction goes
//! through [`pairwise_sum`] over a materialized vector, so results do not depend
//! on the worker count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with per-point loops forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

#[cfg(feature = "parallel")]
fn run_parallel() -> bool {
    !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Run `f` on a pool of `workers` threads (0 = all available cores).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Evaluate `f` at every index in `0..n`, in index order.
pub fn map_points<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if run_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fill `out` in blocks of `width` values, one block per point.
pub fn fill_points<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(width > 0 && out.len().is_multiple_of(width));
    #[cfg(feature = "parallel")]
    if run_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(width)
            .enumerate()
            .with_min_len(64)
            .for_each(|(p, block)| f(p, block));
        return;
    }
    for (p, block) in out.chunks_mut(width).enumerate() {
        f(p, block);
    }
}

/// Fallible variant of [`fill_points`]; returns the lowest failing point's error.
pub fn try_fill_points<E, F>(out: &mut [f64], width: usize, f: F) -> Result<(), E>
where
    E: Send,
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
{
    let failures: Vec<Option<E>> = {
        #[cfg(feature = "parallel")]
        {
            if run_parallel() {
                use rayon::prelude::*;
                out.par_chunks_mut(width)
                    .enumerate()
                    .with_min_len(64)
                    .map(|(p, block)| f(p, block).err())
                    .collect()
            } else {
                out.chunks_mut(width)
                    .enumerate()
                    .map(|(p, block)| f(p, block).err())
                    .collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            out.chunks_mut(width)
                .enumerate()
                .map(|(p, block)| f(p, block).err())
                .collect()
        }
    };
    match failures.into_iter().flatten().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

const PAIRWISE_BLOCK: usize = 16;

/// Sum in a fixed binary tree over the slice layout; blocks of 16 are summed
/// left to right.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
