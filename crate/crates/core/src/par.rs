//! Thin switch between rayon and sequential iteration.
//!
//! Every helper here is pointwise or per-item: no floating-point reduction
//! crosses item boundaries, so results are bitwise identical with and
//! without the `parallel` feature and for any thread count.

use ndarray::{ArrayView3, ArrayViewMut1, ArrayViewMut3, Axis, Zip};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `out[idx] = f(a[idx], b[idx])` over equally shaped views.
pub(crate) fn zip_map2<F>(out: ArrayViewMut3<f64>, a: ArrayView3<f64>, b: ArrayView3<f64>, f: F)
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    let z = Zip::from(out).and(a).and(b);
    #[cfg(feature = "parallel")]
    z.par_for_each(|o, &x, &y| *o = f(x, y));
    #[cfg(not(feature = "parallel"))]
    z.for_each(|o, &x, &y| *o = f(x, y));
}

/// `out[idx] = f(out[idx], a[idx])`.
pub(crate) fn zip_update<F>(out: ArrayViewMut3<f64>, a: ArrayView3<f64>, f: F)
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    let z = Zip::from(out).and(a);
    #[cfg(feature = "parallel")]
    z.par_for_each(|o, &x| *o = f(*o, x));
    #[cfg(not(feature = "parallel"))]
    z.for_each(|o, &x| *o = f(*o, x));
}

/// Maps `f` over `0..len` and collects the results in index order.
pub(crate) fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Runs `f` on every element of a mutable slice together with its index.
pub(crate) fn for_each_indexed<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    #[cfg(not(feature = "parallel"))]
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Fallible chunked loop: `f(chunk_index, chunk)` over `chunk`-sized pieces.
pub(crate) fn try_for_each_chunk<T, E, F>(items: &mut [T], chunk: usize, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items
            .par_chunks_mut(chunk)
            .enumerate()
            .try_for_each(|(c, xs)| f(c, xs))
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .chunks_mut(chunk)
            .enumerate()
            .try_for_each(|(c, xs)| f(c, xs))
    }
}

/// Runs `f` on every 1D lane of `a` along `axis`.
pub(crate) fn for_each_lane<F>(mut a: ArrayViewMut3<f64>, axis: usize, f: F)
where
    F: Fn(ArrayViewMut1<f64>) + Sync + Send,
{
    let z = Zip::from(a.lanes_mut(Axis(axis)));
    #[cfg(feature = "parallel")]
    z.par_for_each(f);
    #[cfg(not(feature = "parallel"))]
    z.for_each(f);
}
