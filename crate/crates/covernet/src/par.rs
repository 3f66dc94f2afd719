//! Data-parallel execution helpers.
//!
//! Every hot loop in the crate goes through one of these functions. With the
//! `parallel` feature (default) they fan out over rayon; without it they run
//! sequentially with identical semantics. All of them preserve index order,
//! and every kernel built on top accumulates each output element in a fixed
//! sequential order, so results are bitwise identical regardless of thread
//! count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to each `row_len`-sized chunk of `data`, passing the chunk index.
pub fn for_each_row_mut<T, F>(data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(row_len > 0 && data.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Sequential twin of [`for_each_row_mut`], always available (benches compare
/// the two directly).
pub fn for_each_row_mut_seq<T, F>(data: &mut [T], row_len: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    debug_assert!(row_len > 0 && data.len() % row_len == 0);
    data.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
}

/// Map `0..n` through `f`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Run `job` on a pool of `threads` workers (0 = default-sized pool).
///
/// Without the `parallel` feature the job simply runs on the current thread;
/// the kernels are deterministic either way.
pub fn with_parallelism<R: Send>(threads: usize, job: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return job();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction cannot fail with static config")
            .install(job)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        job()
    }
}
