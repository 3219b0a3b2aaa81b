//! Worker-pool helper. Every parallel map in the crate collects in input
//! order, so results never depend on the worker count.

use rayon::{ThreadPool, ThreadPoolBuilder};

pub(crate) fn pool(workers: usize) -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build worker pool")
}

/// Runs `f` inside a pool of `workers` threads.
pub(crate) fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    pool(workers).install(f)
}
