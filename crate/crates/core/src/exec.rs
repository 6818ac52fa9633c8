//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel map in the crate goes through [`Exec::map`]. Results are
//! always collected in index order and any reduction happens afterwards on
//! the collected vector, so output bits never depend on the thread count.
//! Without the `parallel` feature `Exec::Parallel` silently runs sequentially.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over consecutive `[start, end)` chunks of `0..len`.
    pub fn map_chunks<T, F>(self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, usize) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n = len.div_ceil(chunk);
        self.map(n, |i| f(i * chunk, ((i + 1) * chunk).min(len)))
    }

    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Sizes the global worker pool. Returns false when the pool was already
/// initialised or the crate was built without the `parallel` feature.
pub fn init_workers(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
