//! Ordered data-parallel map with a sequential fallback.
//!
//! All batch work in the crate (episode sweeps, calibration rollouts, SVDD
//! scoring) goes through [`ordered_map`]. With the `parallel` feature the map
//! fans out over rayon; without it the sequential path runs. Both return
//! results in input order, so downstream aggregation is bit-identical either
//! way. [`ordered_map_seq`] is always available for direct comparisons.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn ordered_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Sequential map, regardless of feature flags.
pub fn ordered_map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
