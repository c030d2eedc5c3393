//! Execution helpers shared by the Monte Carlo loops.
//!
//! Every parallel reduction here is chunked with a fixed chunk size and merged
//! in chunk order, so the parallel and sequential builds produce bit-identical
//! floating-point results for the same inputs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for deterministic reductions over particles/samples.
pub const CHUNK: usize = 1024;

/// Apply `f(i, state_i)` to every item of `items`, where each item is a
/// disjoint mutable slice of width `width`. `aux` is a parallel per-item
/// state array (RNGs, Jacobians, ...).
pub fn for_each_particle<A, F>(items: &mut [f64], aux: &mut [A], width: usize, f: F)
where
    A: Send,
    F: Fn(usize, &mut [f64], &mut A) + Sync,
{
    debug_assert_eq!(items.len(), aux.len() * width.max(1));
    #[cfg(feature = "parallel")]
    {
        items
            .par_chunks_mut(width)
            .zip(aux.par_iter_mut())
            .enumerate()
            .for_each(|(i, (x, a))| f(i, x, a));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (x, a)) in items.chunks_mut(width).zip(aux.iter_mut()).enumerate() {
            f(i, x, a);
        }
    }
}

/// Deterministic chunked accumulation over `n` indexed work items.
///
/// `fill` processes a contiguous index range into a fresh accumulator; chunk
/// accumulators are merged in index order regardless of how many threads ran.
pub fn chunked_accumulate<A, I, F, M>(n: usize, chunk: usize, init: I, fill: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(std::ops::Range<usize>, &mut A) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let run = |c: usize| {
        let lo = c * chunk;
        let hi = (lo + chunk).min(n);
        let mut acc = init();
        fill(lo..hi, &mut acc);
        acc
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<A> = (0..n_chunks).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<A> = (0..n_chunks).map(run).collect();

    let mut out = init();
    for p in parts {
        merge(&mut out, p);
    }
    out
}

/// Deterministic sum of `width` quantities over `n` items: `eval(i, buf)`
/// adds item i's contribution into `buf`.
pub fn chunked_sum<F>(n: usize, width: usize, eval: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    chunked_accumulate(
        n,
        CHUNK,
        || vec![0.0; width],
        |range, acc| {
            for i in range {
                eval(i, acc);
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        },
    )
}

/// Parallel map preserving input order.
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_order() {
        let n = 5000;
        let s = chunked_sum(n, 1, |i, buf| buf[0] += (i as f64).sin() * 1e-3);
        // Same chunk structure computed by hand.
        let mut expect = 0.0;
        let mut c = 0;
        while c < n {
            let hi = (c + CHUNK).min(n);
            let mut part = 0.0;
            for i in c..hi {
                part += (i as f64).sin() * 1e-3;
            }
            expect += part;
            c = hi;
        }
        assert_eq!(s[0].to_bits(), expect.to_bits());
    }

    #[test]
    fn ordered_map_keeps_order() {
        let v: Vec<usize> = (0..100).collect();
        let out = ordered_map(&v, |x| x * 2);
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }
}
