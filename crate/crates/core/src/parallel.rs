//! Data-parallel helpers.
//!
//! Every batch loop in the crate goes through [`map_indexed`]. With the
//! `parallel` feature the work is spread over the rayon pool; without it (or
//! after `set_mode(Mode::Sequential)`) it runs on the calling thread. Results
//! always come back in input order, and reductions over them are performed
//! sequentially by the callers, so both modes produce bit-identical output.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Selects the execution mode at runtime. `Parallel` is a no-op request when
/// the crate was built without the `parallel` feature.
pub fn set_mode(mode: Mode) {
    SEQUENTIAL.store(mode == Mode::Sequential, Ordering::SeqCst);
}

pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::SeqCst) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Order-preserving map over `items`.
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == Mode::Parallel {
            use rayon::prelude::*;
            return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
        }
    }
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == Mode::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Configures the global rayon pool size. Returns false if the pool was
/// already initialised or the feature is off.
pub fn init_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}
