//! Execution-mode selection for data-parallel loops.
//!
//! Hot loops (campaign trials, per-sample solves, lead-field columns) are
//! written against [`map_indexed`], which runs on the rayon pool when the
//! `parallel` feature is enabled and the mode asks for it, and on the
//! current thread otherwise. Results are collected by index, so the output
//! never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

/// Applies `f` to `0..n` and collects results in index order.
pub fn map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Runs `f` inside a rayon pool of `workers` threads. With `workers` unset
/// (or the `parallel` feature disabled) `f` runs in the ambient context.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match workers {
            Some(w) if w > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("rayon pool construction cannot fail for positive thread counts")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_default_agree() {
        let square = |i: usize| (i * i) as u64;
        let seq = map_indexed(Parallelism::Sequential, 100, square);
        let def = map_indexed(Parallelism::default(), 100, square);
        assert_eq!(seq, def);
    }

    #[test]
    fn order_is_by_index() {
        let out = map_indexed(Parallelism::default(), 1000, |i| i);
        assert!(out.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn with_workers_returns_closure_result() {
        assert_eq!(with_workers(Some(2), || 41 + 1), 42);
        assert_eq!(with_workers(None, || 7), 7);
    }
}
