//! Thread-count configuration and a deterministic chunked `for_each`.
//!
//! Work is split into disjoint output chunks, each computed exactly as in the
//! serial loop, so results are bit-identical for every thread count.

use std::sync::OnceLock;

/// Environment variable holding the worker thread count (default 1).
pub const THREADS_ENV: &str = "DYNRECON_THREADS";

static THREADS: OnceLock<usize> = OnceLock::new();

/// Parses a thread-count value; `None` for anything but a positive integer.
pub fn parse_threads(value: &str) -> Option<usize> {
    value.trim().parse::<usize>().ok().filter(|&n| n >= 1)
}

/// Thread count from [`THREADS_ENV`], read once per process.
pub fn thread_count() -> usize {
    *THREADS.get_or_init(|| match std::env::var(THREADS_ENV) {
        Ok(v) => parse_threads(&v).unwrap_or_else(|| {
            log::warn!("ignoring {THREADS_ENV}={v:?}: expected a positive integer");
            1
        }),
        Err(_) => 1,
    })
}

/// Calls `f(index, chunk)` for consecutive `chunk_len`-sized pieces of `out`,
/// spreading them over up to [`thread_count`] scoped threads.
pub(crate) fn for_each_chunk<F>(out: &mut [f64], chunk_len: usize, min_parallel_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let threads = thread_count();
    if threads <= 1 || out.len() < min_parallel_len || chunk_len == 0 {
        for (i, c) in out.chunks_mut(chunk_len.max(1)).enumerate() {
            f(i, c);
        }
        return;
    }
    let n_chunks = out.len().div_ceil(chunk_len);
    let per_thread = n_chunks.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, block) in out.chunks_mut(per_thread * chunk_len).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (i, c) in block.chunks_mut(chunk_len).enumerate() {
                    f(t * per_thread + i, c);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse() {
        assert_eq!(parse_threads("4"), Some(4));
        assert_eq!(parse_threads(" 1 "), Some(1));
        assert_eq!(parse_threads("0"), None);
        assert_eq!(parse_threads("many"), None);
    }

    #[test]
    fn chunks_cover_output_in_order() {
        let mut out = vec![0.0; 10];
        for_each_chunk(&mut out, 3, 0, |i, c| c.iter_mut().for_each(|v| *v = i as f64));
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0]);
    }
}
