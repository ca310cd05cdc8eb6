//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction goes through [`pairwise_sum`] over an ordered buffer, so
//! results do not depend on the number of worker threads.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

macro_rules! if_rayon {
    ($rayon_value: expr, $else_value: expr) => {{
        #[cfg(feature = "rayon")]
        {
            ($rayon_value)
        }
        #[cfg(not(feature = "rayon"))]
        {
            ($else_value)
        }
    }};
}

/// Route all helpers through the sequential path until reset.
pub fn set_force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Whether the crate was built with the rayon backend.
pub fn parallel_available() -> bool {
    if_rayon!(true, false)
}

/// Configure the global worker pool. A no-op without the rayon backend or
/// when the pool was already initialised.
pub fn init_threads(n: usize) {
    if_rayon!(
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        },
        {
            let _ = n;
        }
    )
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if_rayon!(
        {
            use rayon::prelude::*;
            if force_sequential() {
                (0..n).map(f).collect()
            } else {
                (0..n).into_par_iter().map(f).collect()
            }
        },
        (0..n).map(f).collect()
    )
}

/// Map over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// Fixed-shape pairwise summation tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if v.len() <= LEAF {
        let mut acc = 0.0;
        for x in v {
            acc += x;
        }
        return acc;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Deterministic parallel sum of `f(i)` for `i < n`.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    pairwise_sum(&map_indexed(n, f))
}
