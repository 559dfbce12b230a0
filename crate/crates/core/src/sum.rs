//! Deterministic pairwise summation.

const LEAF: usize = 64;

/// Sums `term(i)` for `i` in `lo..hi` with a fixed pairwise tree, so the
/// result depends only on the terms and never on scheduling.
pub(crate) fn pairwise<F>(lo: usize, hi: usize, term: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    if hi - lo <= LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += term(i);
        }
        acc
    } else {
        let mid = lo + (hi - lo) / 2;
        pairwise(lo, mid, term) + pairwise(mid, hi, term)
    }
}
