//! Deterministic fork-join over an index range.
//!
//! Worker count comes from the caller (the CLI resolves the
//! `ALPHABOX_THREADS` env var; absence means 1). Results are written into
//! per-index slots, so the output order never depends on scheduling.

/// Resolve the worker cap from `ALPHABOX_THREADS`; unset or invalid means 1.
pub fn env_thread_cap() -> usize {
    std::env::var("ALPHABOX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Map `f` over `0..n` with at most `threads` workers, preserving index order.
pub fn run_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest: &mut [Option<T>] = &mut slots;
        let mut start = 0;
        while start < n {
            let take = chunk.min(n - start);
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let begin = start;
            let f = &f;
            scope.spawn(move || {
                for (offset, slot) in head.iter_mut().enumerate() {
                    *slot = Some(f(begin + offset));
                }
            });
            start += take;
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
