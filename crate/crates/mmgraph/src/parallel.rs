//! Batch-item parallelism. Items map independently; callers fold the
//! returned vector in index order, so results are bitwise identical whether
//! the map ran on one thread or many.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime (also used to honor
/// `MMGRAPH_THREADS=1` without rebuilding).
pub fn set_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::Relaxed);
}

pub fn is_sequential() -> bool {
    cfg!(not(feature = "parallel")) || FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if is_sequential() {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
