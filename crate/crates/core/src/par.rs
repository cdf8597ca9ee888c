//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the hot loops run on the rayon
//! pool; without it every call degrades to the plain sequential iterator.
//! Results are always returned in input order, and reductions go through
//! [`pairwise_sum`] on fixed-size chunks so the floating-point result does
//! not depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel kernel is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Number of items summed sequentially before the pairwise stage.
pub const REDUCE_CHUNK: usize = 64;

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_range<R, F>(exec: Execution, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
        _ => (0..len).map(f).collect(),
    }
}

pub fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Pairwise (cascade) summation with a fixed tree shape.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Element-wise pairwise summation of equally sized vectors.
pub fn pairwise_sum_vecs(values: &[Vec<f64>], width: usize) -> Vec<f64> {
    match values.len() {
        0 => vec![0.0; width],
        1 => values[0].clone(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            let mut a = pairwise_sum_vecs(lo, width);
            let b = pairwise_sum_vecs(hi, width);
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        }
    }
}

/// Sums `f(item)` over `items` into a `width`-long accumulator.
///
/// Items are grouped into chunks of [`REDUCE_CHUNK`], each chunk is
/// accumulated in order, and the chunk totals are combined pairwise. The
/// result is bitwise identical for either execution mode.
pub fn chunked_vec_sum<T, E, F>(
    exec: Execution,
    items: &[T],
    width: usize,
    f: F,
) -> Result<Vec<f64>, E>
where
    T: Sync,
    E: Send,
    F: Fn(&T, &mut [f64]) -> Result<(), E> + Sync + Send,
{
    let chunks: Vec<&[T]> = items.chunks(REDUCE_CHUNK).collect();
    let partials = try_map(exec, &chunks, |chunk| {
        let mut acc = vec![0.0; width];
        for item in chunk.iter() {
            f(item, &mut acc)?;
        }
        Ok(acc)
    })?;
    Ok(pairwise_sum_vecs(&partials, width))
}
