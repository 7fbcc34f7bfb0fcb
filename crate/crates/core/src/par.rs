//! Deterministic parallel reductions.
//!
//! Work is split into blocks whose boundaries depend only on the item count,
//! each block is summed sequentially, and block results are added in block
//! order. The result is therefore bit-identical for any thread count.

use std::ops::Range;

use rayon::prelude::*;

const MIN_BLOCK: usize = 64;
const MAX_BLOCKS: usize = 32;

pub(crate) fn blocks(n: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let size = MIN_BLOCK.max(n.div_ceil(MAX_BLOCKS));
    (0..n)
        .step_by(size)
        .map(|start| start..(start + size).min(n))
        .collect()
}

/// Sums `width`-long vectors produced by `work` over `0..n`.
pub(crate) fn accumulate<F>(n: usize, width: usize, work: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = blocks(n)
        .into_par_iter()
        .map(|range| {
            let mut acc = vec![0.0; width];
            work(range, &mut acc);
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}
