//! Parallel/sequential execution switch.
//!
//! Batch work (signature construction, corpus scans, candidate evaluation)
//! is written once against these helpers. With the `parallel` feature the
//! parallel mode runs on rayon; without it every mode runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch operation should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Maximum of `f` over a slice, `None` when empty. NaN results are ignored.
pub fn max_by_f64<T, F>(mode: ExecMode, items: &[T], f: F) -> Option<f64>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let pick = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    };
    let lift = |v: f64| if v.is_nan() { None } else { Some(v) };
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items
            .par_iter()
            .map(|t| lift(f(t)))
            .reduce(|| None, pick);
    }
    let _ = mode;
    items.iter().map(|t| lift(f(t))).fold(None, pick)
}

/// Runs `f` inside a pool of at most `threads` workers (parallel mode) or
/// directly on the calling thread.
pub fn with_pool<R: Send>(mode: ExecMode, threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && threads > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(f);
        }
    }
    let _ = (mode, threads);
    f()
}
