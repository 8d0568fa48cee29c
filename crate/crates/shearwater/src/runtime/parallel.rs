//! Shared-memory kernel execution and deterministic reductions.
//!
//! Kernels partition along direction 0 into contiguous slabs, one worker per
//! slab. Every grid point is written by exactly one statement evaluation that
//! reads no other point of the same target, so the result is bitwise
//! identical for any slab count — worker count is a throughput knob, never an
//! accuracy knob. Reductions keep the same guarantee by fixing the summation
//! tree: a pairwise sum per interior row, rows combined pairwise in grid
//! order, regardless of which worker produced which row.

use super::vm::{exec_chunk, Chunk, CompiledKernel, CompiledReduction, Op, RegFile, LINE};
use crate::grid::{FieldSet, Grid};
use rayon::prelude::*;

/// Walk a half-open range, chunking the innermost direction, and execute the
/// op sequence on each chunk. `targets` are sub-slices of the padded arrays
/// starting at padded flat index `target_base`.
fn run_range(
    ops: &[Op],
    regs: &mut RegFile,
    reads: &[&[f64]],
    targets: &mut [&mut [f64]],
    target_base: usize,
    grid: &Grid,
    range: &[(i64, i64)],
) {
    if range.iter().any(|&(lo, hi)| hi <= lo) {
        return;
    }
    let inner = range.len() - 1;
    let (ilo, ihi) = range[inner];
    let inner_len = (ihi - ilo) as usize;
    let mut coords: Vec<i64> = range.iter().map(|&(lo, _)| lo).collect();
    loop {
        coords[inner] = ilo;
        let mut flat = grid.flatten(&coords);
        let mut remaining = inner_len;
        while remaining > 0 {
            let len = remaining.min(LINE);
            exec_chunk(
                ops,
                regs,
                reads,
                targets,
                target_base,
                &Chunk {
                    flat,
                    coords: &coords,
                    len,
                },
                inner,
            );
            flat += len;
            coords[inner] += len as i64;
            remaining -= len;
        }
        // Advance the outer directions like an odometer.
        let mut d = inner;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            coords[d] += 1;
            if coords[d] < range[d].1 {
                break;
            }
            coords[d] = range[d].0;
        }
    }
}

/// Split one padded array into per-slab sub-slices at the given padded flat
/// cut positions (`cuts.len() == slabs + 1`, ascending).
fn split_at_cuts<'a>(mut rest: &'a mut [f64], cuts: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(cuts.len() - 1);
    let mut consumed = 0usize;
    for w in cuts.windows(2) {
        let (skip, tail) = rest.split_at_mut(w[0] - consumed);
        let _ = skip;
        let (mine, tail) = tail.split_at_mut(w[1] - w[0]);
        out.push(mine);
        rest = tail;
        consumed = w[1];
    }
    out
}

/// Execute one compiled kernel over its range, split across the pool's
/// workers.
pub fn execute_kernel(
    kernel: &CompiledKernel,
    fields: &mut FieldSet,
    grid: &Grid,
    pool: &rayon::ThreadPool,
) {
    let (lo0, hi0) = kernel.range.0[0];
    if kernel.range.point_count() == 0 {
        return;
    }
    let mut taken: Vec<Vec<f64>> = kernel
        .targets
        .iter()
        .map(|&s| fields.take_slot(s))
        .collect();
    let reads: Vec<&[f64]> = kernel.reads.iter().map(|&s| fields.by_slot(s)).collect();

    let slabs = pool.current_num_threads().max(1).min((hi0 - lo0) as usize);
    let h0 = grid.halos[0] as i64;
    let stride0 = grid.strides[0];
    let n0 = (hi0 - lo0) as usize;
    // Slab k covers direction-0 indices [bounds[k], bounds[k+1]).
    let bounds: Vec<i64> = (0..=slabs)
        .map(|k| lo0 + (n0 * k / slabs) as i64)
        .collect();
    let cuts: Vec<usize> = bounds
        .iter()
        .map(|&b| (b + h0) as usize * stride0)
        .collect();

    let mut slab_targets: Vec<Vec<&mut [f64]>> = (0..slabs).map(|_| Vec::new()).collect();
    for vec in taken.iter_mut() {
        for (k, piece) in split_at_cuts(vec, &cuts).into_iter().enumerate() {
            slab_targets[k].push(piece);
        }
    }

    pool.install(|| {
        slab_targets
            .par_iter_mut()
            .enumerate()
            .for_each(|(k, targets)| {
                let mut range: Vec<(i64, i64)> = kernel.range.0.clone();
                range[0] = (bounds[k], bounds[k + 1]);
                let mut regs = RegFile::new(kernel.reg_count);
                run_range(
                    &kernel.ops,
                    &mut regs,
                    &reads,
                    targets,
                    cuts[k],
                    grid,
                    &range,
                );
            });
    });

    drop(slab_targets);
    drop(reads);
    for (&slot, data) in kernel.targets.iter().zip(taken) {
        fields.restore_slot(slot, data);
    }
}

/// Fixed-shape pairwise sum: split at the midpoint until single elements.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Evaluate a pointwise expression at every interior point and sum it with a
/// fixed pairwise tree: per-row sums in grid order, then a pairwise sum of
/// the row results. Bitwise independent of worker count.
pub fn reduce_interior(
    red: &CompiledReduction,
    fields: &FieldSet,
    grid: &Grid,
    pool: &rayon::ThreadPool,
) -> f64 {
    let reads: Vec<&[f64]> = red.reads.iter().map(|&s| fields.by_slot(s)).collect();
    let rows = grid.interior_row_starts();
    let row_len = grid.row_len();
    let inner = grid.ndim - 1;
    let partials: Vec<f64> = pool.install(|| {
        rows.par_iter()
            .map_init(
                || (RegFile::new(red.reg_count), vec![0.0f64; row_len]),
                |(regs, row_vals), &flat_start| {
                    let coords = grid.unflatten(flat_start);
                    let mut coords = coords;
                    let mut flat = flat_start;
                    let mut pos = 0usize;
                    while pos < row_len {
                        let len = (row_len - pos).min(LINE);
                        let chunk = Chunk {
                            flat,
                            coords: &coords,
                            len,
                        };
                        exec_chunk(&red.ops, regs, &reads, &mut [], 0, &chunk, inner);
                        row_vals[pos..pos + len].copy_from_slice(regs.lane(red.result, len));
                        flat += len;
                        coords[inner] += len as i64;
                        pos += len;
                    }
                    pairwise_sum(row_vals)
                },
            )
            .collect()
    });
    pairwise_sum(&partials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_is_a_fixed_tree() {
        let v: Vec<f64> = (1..=7).map(|i| 1.0 / i as f64).collect();
        let expect = ((v[0] + v[1]) + v[2]) + ((v[3] + v[4]) + (v[5] + v[6]));
        assert_eq!(pairwise_sum(&v).to_bits(), expect.to_bits());
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[4.25]), 4.25);
    }
}
