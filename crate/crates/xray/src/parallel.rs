//! Data-parallel map helpers. With the `parallel` feature (default) the
//! inner loops run on rayon; without it they fall back to plain sequential
//! iteration. Results always come back in input order, so output bytes are
//! identical either way.

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

/// Sequential map with the same shape as [`map_indexed`]; the criterion
/// benches use it as the baseline when the `parallel` feature is on.
pub fn map_indexed_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

/// Builds a scoped rayon thread pool honoring an explicit worker cap and
/// runs `op` inside it. Used by the CLI to apply `XRAY_THREADS`; outputs do
/// not depend on the cap.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<R: Send>(threads: Option<usize>, op: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(op),
        _ => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<R>(_threads: Option<usize>, op: impl FnOnce() -> R) -> R {
    op()
}

/// Reads the `XRAY_THREADS` cap from the environment.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var("XRAY_THREADS").ok().and_then(|v| v.parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map_indexed(&items, |i, v| (i as u64) * 2 + v);
        let expected: Vec<u64> = (0..1000).map(|i| i * 3).collect();
        assert_eq!(out, expected);
        assert_eq!(map_indexed_seq(&items, |i, v| (i as u64) * 2 + v), expected);
    }

    #[test]
    fn thread_cap_runs_op() {
        let r = with_thread_cap(Some(2), || map_indexed(&[1, 2, 3], |_, v| v * v));
        assert_eq!(r, vec![1, 4, 9]);
    }
}
