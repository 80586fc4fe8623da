//! Execution strategy for data-parallel loops.
//!
//! Every parallel path in the crate produces results bit-identical to the
//! sequential path: work is split over independent outputs (matrix rows,
//! samples) and any reduction happens afterwards in a fixed order.
//! Without the `parallel` feature, [`Exec::Parallel`] silently runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but short-circuits on the first error (by index).
pub fn try_map_indexed<T, E, F>(exec: Exec, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, n, f).into_iter().collect()
}

/// Applies `f(row_index, row)` to every `width`-sized chunk of `data`.
pub(crate) fn for_each_row<F>(exec: Exec, data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = exec;
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}
