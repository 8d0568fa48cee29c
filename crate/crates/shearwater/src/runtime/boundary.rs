//! Halo filling for periodic and symmetry boundaries.
//!
//! Directions are processed in ascending order, each pass covering the full
//! padded extent of every other direction, so corner halos come out right:
//! pass d wraps values that pass d-1 already made valid. Boundary passes run
//! serially — they touch only O(surface) points.

use crate::grid::{FieldSet, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// One boundary pass, resolved against array slots at build time. Parity is
/// +1 for scalar-like fields, -1 for components normal to the boundary.
#[derive(Clone, Debug)]
pub enum BoundaryAction {
    Periodic {
        direction: usize,
        slots: Vec<usize>,
    },
    Symmetry {
        direction: usize,
        side: Side,
        slots: Vec<(usize, i8)>,
    },
}

impl BoundaryAction {
    pub fn direction(&self) -> usize {
        match self {
            BoundaryAction::Periodic { direction, .. } => *direction,
            BoundaryAction::Symmetry { direction, .. } => *direction,
        }
    }
}

/// Visit every combination of interior-relative indices over the full padded
/// extent of all directions except `skip`; `coords[skip]` is left for the
/// callback to vary.
fn for_each_transverse(grid: &Grid, skip: usize, mut f: impl FnMut(&mut [i64])) {
    let ndim = grid.ndim;
    let lo: Vec<i64> = (0..ndim).map(|d| -(grid.halos[d] as i64)).collect();
    let hi: Vec<i64> = (0..ndim)
        .map(|d| grid.shape[d] as i64 + grid.halos[d] as i64)
        .collect();
    let mut coords = lo.clone();
    loop {
        f(&mut coords);
        let mut d = ndim;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if d == skip {
                continue;
            }
            coords[d] += 1;
            if coords[d] < hi[d] {
                break;
            }
            coords[d] = lo[d];
        }
    }
}

/// Fill both halo sides of `direction` with periodically wrapped interior
/// values: reading index -k sees index N-k, index N-1+k sees k-1. Halos
/// deeper than the direction's extent keep wrapping (an extent-1 direction
/// gets its single value replicated).
pub fn apply_periodic(field: &mut [f64], grid: &Grid, direction: usize) {
    let n = grid.shape[direction] as i64;
    let h = grid.halos[direction] as i64;
    for_each_transverse(grid, direction, |coords| {
        for k in 1..=h {
            for dst in [-k, n - 1 + k] {
                coords[direction] = dst;
                let di = grid.flatten(coords);
                coords[direction] = dst.rem_euclid(n);
                let si = grid.flatten(coords);
                field[di] = field[si];
            }
        }
    });
}

/// Mirror interior values into one halo side of `direction` about the
/// boundary face: halo index N-1+k sees interior N-k (upper side), halo -k
/// sees interior k-1 (lower side). Parity -1 negates the mirrored value.
pub fn apply_symmetry(field: &mut [f64], grid: &Grid, direction: usize, side: Side, parity: i8) {
    let n = grid.shape[direction] as i64;
    let h = grid.halos[direction] as i64;
    for_each_transverse(grid, direction, |coords| {
        for k in 1..=h {
            let (dst, src) = match side {
                Side::Lower => (-k, k - 1),
                Side::Upper => (n - 1 + k, n - k),
            };
            coords[direction] = dst;
            let di = grid.flatten(coords);
            coords[direction] = src;
            let si = grid.flatten(coords);
            field[di] = if parity < 0 { -field[si] } else { field[si] };
        }
    });
}

/// Run every boundary action in order. Actions must be sorted by direction
/// so corner halos are rebuilt from already-filled lower-direction halos.
pub fn apply_actions(actions: &[BoundaryAction], fields: &mut FieldSet, grid: &Grid) {
    for action in actions {
        match action {
            BoundaryAction::Periodic { direction, slots } => {
                for &slot in slots {
                    let mut data = fields.take_slot(slot);
                    apply_periodic(&mut data, grid, *direction);
                    fields.restore_slot(slot, data);
                }
            }
            BoundaryAction::Symmetry {
                direction,
                side,
                slots,
            } => {
                for &(slot, parity) in slots {
                    let mut data = fields.take_slot(slot);
                    apply_symmetry(&mut data, grid, *direction, *side, parity);
                    fields.restore_slot(slot, data);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_grid(n: usize, h: usize) -> Grid {
        Grid::new(&[n], &[1.0], &[h]).unwrap()
    }

    fn padded(grid: &Grid, values: &[f64]) -> Vec<f64> {
        let mut field = vec![0.0; grid.padded_len()];
        for (i, &v) in values.iter().enumerate() {
            field[grid.flatten(&[i as i64])] = v;
        }
        field
    }

    #[test]
    fn periodic_wraps_one_and_two_deep() {
        let grid = line_grid(4, 2);
        let mut field = padded(&grid, &[1.0, 2.0, 3.0, 4.0]);
        apply_periodic(&mut field, &grid, 0);
        let at = |i: i64| field[grid.flatten(&[i])];
        assert_eq!(at(-1), 4.0);
        assert_eq!(at(-2), 3.0);
        assert_eq!(at(4), 1.0);
        assert_eq!(at(5), 2.0);
    }

    #[test]
    fn periodic_replicates_when_halo_exceeds_extent() {
        let grid = line_grid(1, 3);
        let mut field = padded(&grid, &[7.5]);
        apply_periodic(&mut field, &grid, 0);
        assert!(field.iter().all(|&v| v == 7.5));
    }

    #[test]
    fn symmetry_mirrors_about_the_face() {
        let grid = line_grid(4, 2);
        let mut field = padded(&grid, &[1.0, 2.0, 3.0, 4.0]);
        apply_symmetry(&mut field, &grid, 0, Side::Upper, 1);
        apply_symmetry(&mut field, &grid, 0, Side::Lower, 1);
        let at = |i: i64| field[grid.flatten(&[i])];
        assert_eq!(at(4), 4.0);
        assert_eq!(at(5), 3.0);
        assert_eq!(at(-1), 1.0);
        assert_eq!(at(-2), 2.0);
    }

    #[test]
    fn symmetry_flips_normal_components() {
        let grid = line_grid(3, 1);
        let mut field = padded(&grid, &[1.0, 2.0, 3.0]);
        apply_symmetry(&mut field, &grid, 0, Side::Upper, -1);
        assert_eq!(field[grid.flatten(&[3])], -3.0);
    }

    #[test]
    fn corner_halos_are_consistent_in_two_directions() {
        let grid = Grid::new(&[3, 3], &[1.0, 1.0], &[1, 1]).unwrap();
        let mut field = vec![0.0; grid.padded_len()];
        for i in 0..3i64 {
            for j in 0..3i64 {
                field[grid.flatten(&[i, j])] = (10 * i + j) as f64;
            }
        }
        apply_periodic(&mut field, &grid, 0);
        apply_periodic(&mut field, &grid, 1);
        // The (-1,-1) corner wraps both directions to (2,2).
        assert_eq!(
            field[grid.flatten(&[-1, -1])],
            field[grid.flatten(&[2, 2])]
        );
        assert_eq!(field[grid.flatten(&[3, 3])], field[grid.flatten(&[0, 0])]);
        assert_eq!(field[grid.flatten(&[-1, 3])], field[grid.flatten(&[2, 0])]);
    }
}
