//! Execution helpers. With the `parallel` feature the maps below run on the
//! rayon pool; without it they fall back to plain iterators. Work is always
//! split into a fixed number of chunks and partial results are combined in
//! chunk order, so results are bitwise identical for either mode and for any
//! thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` only if the crate was built with rayon.
    pub fn effective(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }
}

/// Sizes the global pool. Returns the execution mode to use: `Sequential`
/// for one thread or when rayon is compiled out.
pub fn configure_threads(threads: Option<usize>) -> Exec {
    match threads {
        Some(0) | Some(1) => Exec::Sequential,
        #[cfg(feature = "parallel")]
        Some(n) => {
            // a pool that is already built keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Exec::Parallel
        }
        _ => Exec::Parallel.effective(),
    }
}

/// Number of chunks a range of `len` items is cut into. Independent of the
/// thread count on purpose.
pub fn chunk_count(len: usize, min_chunk: usize) -> usize {
    let min_chunk = min_chunk.max(1);
    (len.div_ceil(min_chunk)).clamp(1, 256)
}

pub fn chunk_bounds(len: usize, chunks: usize, c: usize) -> (usize, usize) {
    let base = len / chunks;
    let rem = len % chunks;
    let lo = c * base + c.min(rem);
    let hi = lo + base + usize::from(c < rem);
    (lo, hi)
}

/// Ordered map over `0..n`.
pub fn map<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// In-place ordered map over mutable rows of width `width`.
pub fn for_each_row<T, F>(exec: Exec, data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
        _ => data
            .chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
    }
}

/// Deterministic sum of `f(i)` over `0..n`: per-chunk partial sums added in
/// chunk order.
pub fn sum<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = chunk_count(n, 4096);
    let partial = map(exec, chunks, |c| {
        let (lo, hi) = chunk_bounds(n, chunks, c);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    });
    partial.iter().sum()
}

/// Scatter-accumulate: each chunk of `0..n` writes into its own buffer of
/// length `out_len`, buffers are added in chunk order.
pub fn scatter<F>(exec: Exec, n: usize, out_len: usize, min_chunk: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize, &mut [f64]) + Sync + Send,
{
    let chunks = chunk_count(n, min_chunk);
    let partial = map(exec, chunks, |c| {
        let (lo, hi) = chunk_bounds(n, chunks, c);
        let mut buf = vec![0.0; out_len];
        f(lo, hi, &mut buf);
        buf
    });
    let mut out = vec![0.0; out_len];
    for buf in &partial {
        for (o, b) in out.iter_mut().zip(buf) {
            *o += b;
        }
    }
    out
}
