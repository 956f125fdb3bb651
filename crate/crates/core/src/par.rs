//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it, or with [`Parallelism::Sequential`], everything runs on the
//! calling thread. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// Dedicated pool with this many workers; 0 means rayon's default.
    Threads(usize),
    /// The global rayon pool.
    #[default]
    Global,
}

impl Parallelism {
    /// Worker count from a concurrency limit: 1 maps to sequential.
    pub fn from_limit(limit: usize) -> Self {
        if limit <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(limit)
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Parallelism::Sequential
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        match parallelism {
            Parallelism::Sequential => {}
            Parallelism::Global => return items.par_iter().map(f).collect(),
            Parallelism::Threads(n) => {
                match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                    Err(e) => log::warn!("falling back to sequential execution: {e}"),
                }
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    items.iter().map(f).collect()
}
