//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) independent jobs are spread over the
//! rayon pool; without it, or inside [`sequential`], they run in order on the
//! calling thread. Results are always returned in job order, so outputs do not
//! depend on scheduling.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Environment variable holding the worker count for the global pool.
pub const THREADS_ENV: &str = "GPSEL_THREADS";

/// Runs `f` with all helpers in this module forced onto the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
fn forced_sequential() -> bool {
    FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Runs two closures, potentially in parallel.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() {
            return rayon::join(a, b);
        }
    }
    (a(), b())
}

/// Configures the global worker pool from [`THREADS_ENV`]; falls back to the
/// available parallelism. Returns the worker count in effect.
pub fn init_from_env() -> usize {
    let requested = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested {
            // Fails only if the pool was already built; the existing pool is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        let s = sequential(|| map_indexed(10, |i| i + 1));
        assert_eq!(s, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_flag_restores() {
        sequential(|| assert!(forced_sequential()));
        assert!(!forced_sequential());
    }
}
