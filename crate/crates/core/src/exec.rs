//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) work is spread over rayon;
//! without it every call runs in order on the calling thread. Either way the
//! output order matches the input index order.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` degrades to `Sequential` when the feature is compiled out.
    pub fn effective(self) -> Self {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_indexed`] but stops at the first error. In parallel mode the
/// error reported is whichever failing item finished first.
pub fn try_map_indexed<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `op` on a dedicated pool of `threads` workers, so blocking work such
/// as network calls cannot starve the global pool.
pub fn with_threads<R, OP>(exec: Execution, threads: usize, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(op),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
                op()
            }
        },
        _ => {
            let _ = threads;
            op()
        }
    }
}
