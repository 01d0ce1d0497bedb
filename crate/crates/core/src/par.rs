//! Data-parallel map over read-only inputs.
//!
//! With the default `parallel` feature, [`map_slice`] fans out over rayon;
//! without it the crate falls back to plain iteration. Outputs are collected
//! in input order either way, so results and any reduction over them are
//! deterministic regardless of thread count. [`map_slice_seq`] is always
//! sequential and exists so benchmarks can compare the two paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference path for the benchmarks.
pub fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..257).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761);
        assert_eq!(map_slice(&items, f), map_slice_seq(&items, f));
    }
}
