//! Execution strategy for the data-parallel stages.
//!
//! Everything that fans out over independent items (candidate sets, pairs,
//! sweep grid points) goes through [`map_ordered`], which runs on rayon when
//! the `parallel` feature is enabled and degrades to plain iteration without
//! it. [`map_ordered_seq`] is always sequential; the criterion benches use it
//! as the baseline when comparing the two paths.
//!
//! Both functions preserve input order, so callers observe identical output
//! regardless of the execution strategy. Per-item randomness must be derived
//! from the item index (see [`derive_seed`]), never from shared RNG state.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order matches input order.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_ordered_seq(items, f)
    }
}

/// Sequential variant of [`map_ordered`], available under every feature set.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Derives a per-item RNG seed from a base seed and an item index.
///
/// SplitMix64 finalizer; the same (base, index) always yields the same seed,
/// which keeps parallel and sequential runs bit-identical.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
