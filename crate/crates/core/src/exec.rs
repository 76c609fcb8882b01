//! Data-parallel helpers with a sequential fallback.
//!
//! All helpers collect results **in input order** and leave reductions to
//! the (sequential) caller, so enabling or disabling the `parallel` feature
//! changes wall-clock time but never the floating-point output. Report
//! determinism relies on this.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over a slice, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sums `f(i)` for `i in 0..n` in index order.
///
/// The partial values are materialised first so the summation order is
/// identical in parallel and sequential builds.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(n, f).into_iter().sum()
}

/// True when the crate was built with the rayon backend.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert_eq!(v[0], 0);
        assert_eq!(v[999], 1998);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sum_range_matches_sequential_fold() {
        let direct: f64 = (0..513).map(|i| (i as f64).sqrt()).sum();
        let helper = sum_range(513, |i| (i as f64).sqrt());
        assert_eq!(direct, helper);
    }
}
