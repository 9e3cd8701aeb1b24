//! Execution helpers shared by the per-pixel and per-sample kernels.
//!
//! With the `parallel` feature enabled the helpers fan work out over rayon;
//! without it they run plain sequential loops. Either way the results are
//! identical: work is split into fixed-size chunks and partial results are
//! combined in chunk order, so the outcome does not depend on how many
//! workers happen to run. A pool of one thread takes the sequential path
//! directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use std::ops::Range;

/// Fixed reduction chunk length. Must not change at runtime: the chunk
/// boundaries define the floating-point summation order.
pub(crate) const CHUNK: usize = 4096;

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|i| i * CHUNK..((i + 1) * CHUNK).min(n))
        .collect()
}

#[cfg(feature = "parallel")]
fn use_rayon() -> bool {
    rayon::current_num_threads() > 1
}

/// Applies `f` to every `cols`-long row of `data`, passing the row index.
pub(crate) fn for_each_row_mut<T, F>(data: &mut [T], cols: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_rayon() {
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    for (r, row) in data.chunks_mut(cols).enumerate() {
        f(r, row);
    }
}

/// Builds a `Vec` of length `n` where element `i` is `f(i)`.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_rayon() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps each fixed-size index chunk to a partial result.
/// Partials come back in chunk order.
pub(crate) fn map_chunks<A, M>(n: usize, map: M) -> Vec<A>
where
    A: Send,
    M: Fn(Range<usize>) -> A + Sync + Send,
{
    let ranges = chunk_ranges(n);
    #[cfg(feature = "parallel")]
    if use_rayon() {
        return ranges.into_par_iter().map(map).collect();
    }
    ranges.into_iter().map(map).collect()
}

/// Chunked map-reduce: partials are folded left in chunk order, which keeps
/// floating-point reductions independent of the worker count.
pub(crate) fn reduce_chunks<A, M, R>(n: usize, map: M, reduce: R) -> Option<A>
where
    A: Send,
    M: Fn(Range<usize>) -> A + Sync + Send,
    R: Fn(A, A) -> A,
{
    map_chunks(n, map).into_iter().reduce(reduce)
}

/// Count, mean, and population standard deviation over the indices where
/// `value(i)` is Some. Two passes: the second accumulates centered squares,
/// which stays accurate for data with a large offset and a small spread.
pub(crate) fn masked_stats<F>(n: usize, value: F) -> (usize, f64, f64)
where
    F: Fn(usize) -> Option<f64> + Sync,
{
    let first = reduce_chunks(
        n,
        |range| {
            let mut cnt = 0usize;
            let mut sum = 0.0;
            for i in range {
                if let Some(v) = value(i) {
                    cnt += 1;
                    sum += v;
                }
            }
            (cnt, sum)
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    );
    let (cnt, sum) = match first {
        Some((cnt, sum)) if cnt > 0 => (cnt, sum),
        _ => return (0, 0.0, 0.0),
    };
    let mean = sum / cnt as f64;
    let centered_sq = reduce_chunks(
        n,
        |range| {
            let mut acc = 0.0;
            for i in range {
                if let Some(v) = value(i) {
                    let d = v - mean;
                    acc += d * d;
                }
            }
            acc
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0);
    (cnt, mean, (centered_sq / cnt as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert_eq!(v[0], 0);
        assert_eq!(v[999], 1998);
    }

    #[test]
    fn reduce_chunks_matches_sequential_sum() {
        let n = 3 * CHUNK + 17;
        let total = reduce_chunks(n, |r| r.map(|i| i as u64).sum::<u64>(), |a, b| a + b).unwrap();
        assert_eq!(total, (n as u64 - 1) * n as u64 / 2);
    }

    #[test]
    fn masked_stats_skips_masked_values() {
        let vals = [1.0, f64::NAN, 3.0];
        let (cnt, mean, sd) = masked_stats(3, |i| {
            let v = vals[i];
            v.is_finite().then_some(v)
        });
        assert_eq!(cnt, 2);
        assert_eq!(mean, 2.0);
        assert_eq!(sd, 1.0);
    }
}
