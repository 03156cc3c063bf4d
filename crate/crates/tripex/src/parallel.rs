// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Order-preserving data-parallel map with a sequential fallback.
//!
//! With the default `parallel` feature the closures run on the rayon thread
//! pool; without it they run on the calling thread.  Either way the results
//! come back in input order and downstream reductions iterate that order, so
//! numerical output is bit-identical regardless of thread count.  The
//! `*_seq` variant is always sequential; benches use it as the baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant of [`map_indexed`], the bench baseline.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let f = |i: usize| (i as f64).sqrt() * 3.0 - 1.0;
        let par = map_indexed(257, f);
        let seq = map_indexed_seq(257, f);
        assert_eq!(par, seq); // bitwise equality, not approximate
    }
}
