//! Optional worker pool for row-parallel kernels.
//!
//! `POET_THREADS` caps the pool; unset defaults to the machine parallelism
//! (at most 8). Every parallel loop here partitions output rows into
//! contiguous blocks, and each row is computed by exactly one thread with the
//! same sequential inner loop, so results are bit-identical for any pool size.

use std::sync::OnceLock;

static WORKERS: OnceLock<usize> = OnceLock::new();

/// Number of worker threads used by the numeric kernels.
pub fn worker_count() -> usize {
    *WORKERS.get_or_init(|| {
        if let Ok(v) = std::env::var("POET_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                return n.max(1);
            }
        }
        std::thread::available_parallelism()
            .map(|n| n.get().min(8))
            .unwrap_or(1)
    })
}

/// Split `data` into contiguous row blocks and run `work(first_row, block)`
/// on each, possibly across threads. `row_len` is the stride of one row.
pub fn for_each_row_block<T, W>(data: &mut [T], row_len: usize, work: W)
where
    T: Send,
    W: Fn(usize, &mut [T]) + Sync,
{
    let rows = if row_len == 0 { 0 } else { data.len() / row_len };
    let threads = worker_count().min(rows.max(1));
    if threads <= 1 || rows < 2 {
        work(0, data);
        return;
    }
    let per = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest = data;
        let mut row0 = 0usize;
        while !rest.is_empty() {
            let take = per.min(rest.len() / row_len);
            let (block, tail) = rest.split_at_mut(take * row_len);
            let worker = &work;
            scope.spawn(move || worker(row0, block));
            row0 += take;
            rest = tail;
        }
    });
}
