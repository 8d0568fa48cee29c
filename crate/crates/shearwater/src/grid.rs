//! Structured grid geometry and field storage.
//!
//! Arrays are stored padded: every direction is extended by a halo on both
//! sides so stencils can read across the interior boundary after a halo
//! exchange. Layout is row-major with direction 0 slowest (the last
//! direction is contiguous). Interior point `k` along direction `d` sits at
//! coordinate `k * deltas[d]`; halo points continue the same uniform ramp to
//! negative and beyond-edge indices.

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("array {0} already exists")]
    DuplicateName(String),
    #[error("unknown array {0}")]
    UnknownField(String),
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub ndim: usize,
    /// Interior points per direction.
    pub shape: Vec<usize>,
    /// Grid spacing per direction.
    pub deltas: Vec<f64>,
    /// Halo width per direction (applied on both sides).
    pub halos: Vec<usize>,
    /// Padded extent per direction: `shape[d] + 2 * halos[d]`.
    pub padded: Vec<usize>,
    /// Padded strides; `strides[ndim - 1] == 1`.
    pub strides: Vec<usize>,
}

impl Grid {
    pub fn new(shape: &[usize], deltas: &[f64], halos: &[usize]) -> Result<Grid, GridError> {
        let ndim = shape.len();
        if !(1..=3).contains(&ndim) {
            return Err(GridError::Dimension(format!(
                "grids must have 1 to 3 directions, got {ndim}"
            )));
        }
        if deltas.len() != ndim || halos.len() != ndim {
            return Err(GridError::Dimension(format!(
                "shape/deltas/halos lengths disagree: {} vs {} vs {}",
                ndim,
                deltas.len(),
                halos.len()
            )));
        }
        if let Some(d) = shape.iter().position(|&n| n == 0) {
            return Err(GridError::Value(format!(
                "direction {d} has zero interior points"
            )));
        }
        if let Some(d) = deltas.iter().position(|&dx| !(dx.is_finite() && dx > 0.0)) {
            return Err(GridError::Value(format!(
                "grid spacing in direction {d} must be finite and positive, got {}",
                deltas[d]
            )));
        }
        let padded: Vec<usize> = shape
            .iter()
            .zip(halos)
            .map(|(&n, &h)| n + 2 * h)
            .collect();
        let mut strides = vec![1usize; ndim];
        for d in (0..ndim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * padded[d + 1];
        }
        Ok(Grid {
            ndim,
            shape: shape.to_vec(),
            deltas: deltas.to_vec(),
            halos: halos.to_vec(),
            padded,
            strides,
        })
    }

    /// Total allocation size of one padded array.
    pub fn padded_len(&self) -> usize {
        self.padded.iter().product()
    }

    /// Number of interior points.
    pub fn interior_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Flat padded offset of an interior-relative multi-index. Indices may
    /// range over `-halos[d] ..= shape[d] - 1 + halos[d]`.
    #[inline]
    pub fn flatten(&self, idx: &[i64]) -> usize {
        debug_assert_eq!(idx.len(), self.ndim);
        let mut flat = 0usize;
        for d in 0..self.ndim {
            debug_assert!(
                idx[d] >= -(self.halos[d] as i64)
                    && idx[d] < (self.shape[d] + self.halos[d]) as i64,
                "index {} out of padded range in direction {d}",
                idx[d]
            );
            flat += (idx[d] + self.halos[d] as i64) as usize * self.strides[d];
        }
        flat
    }

    /// Inverse of [`Grid::flatten`]: interior-relative multi-index of a flat
    /// padded offset.
    pub fn unflatten(&self, mut flat: usize) -> Vec<i64> {
        let mut idx = vec![0i64; self.ndim];
        for d in 0..self.ndim {
            idx[d] = (flat / self.strides[d]) as i64 - self.halos[d] as i64;
            flat %= self.strides[d];
        }
        idx
    }

    /// Coordinate of (possibly halo) point `i` along direction `d`.
    #[inline]
    pub fn coordinate(&self, d: usize, i: i64) -> f64 {
        i as f64 * self.deltas[d]
    }

    /// Flat offsets of the starts of all interior rows (an interior row is
    /// the contiguous run along the last direction at fixed leading
    /// indices), in ascending memory order. Each row has `shape[ndim-1]`
    /// interior points.
    pub fn interior_row_starts(&self) -> Vec<usize> {
        let last = self.ndim - 1;
        let mut rows = vec![0usize];
        for d in 0..last {
            let mut next = Vec::with_capacity(rows.len() * self.shape[d]);
            for base in rows {
                for i in 0..self.shape[d] {
                    next.push(base + (i + self.halos[d]) * self.strides[d]);
                }
            }
            rows = next;
        }
        let inner_off = self.halos[last];
        rows.iter().map(|r| r + inner_off).collect()
    }

    pub fn row_len(&self) -> usize {
        self.shape[self.ndim - 1]
    }
}

/// Named padded arrays over one grid. Insertion order is preserved, which
/// fixes snapshot layout and reduction order.
#[derive(Debug)]
pub struct FieldSet {
    pub grid: Grid,
    arrays: IndexMap<String, Vec<f64>>,
}

impl FieldSet {
    pub fn new(grid: Grid) -> FieldSet {
        FieldSet {
            grid,
            arrays: IndexMap::new(),
        }
    }

    /// Allocate a zero-initialized padded array.
    pub fn allocate(&mut self, name: &str) -> Result<(), GridError> {
        if self.arrays.contains_key(name) {
            return Err(GridError::DuplicateName(name.to_string()));
        }
        self.arrays
            .insert(name.to_string(), vec![0.0; self.grid.padded_len()]);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&[f64], GridError> {
        self.arrays
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| GridError::UnknownField(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64], GridError> {
        self.arrays
            .get_mut(name)
            .map(Vec::as_mut_slice)
            .ok_or_else(|| GridError::UnknownField(name.to_string()))
    }

    /// Move an array out (for exclusive use during a parallel kernel);
    /// return it with [`FieldSet::restore`]. The name stays reserved while
    /// the array is out.
    pub fn take(&mut self, name: &str) -> Result<Vec<f64>, GridError> {
        match self.arrays.get_mut(name) {
            Some(v) if v.is_empty() => Err(GridError::Value(format!(
                "array {name} is already taken"
            ))),
            Some(v) => Ok(std::mem::take(v)),
            None => Err(GridError::UnknownField(name.to_string())),
        }
    }

    pub fn restore(&mut self, name: &str, data: Vec<f64>) {
        debug_assert_eq!(data.len(), self.grid.padded_len());
        if let Some(slot) = self.arrays.get_mut(name) {
            *slot = data;
        }
    }

    /// Stable position of an array; arrays are indexed in allocation order.
    pub fn slot(&self, name: &str) -> Result<usize, GridError> {
        self.arrays
            .get_index_of(name)
            .ok_or_else(|| GridError::UnknownField(name.to_string()))
    }

    pub fn name_of(&self, slot: usize) -> &str {
        self.arrays
            .get_index(slot)
            .map(|(k, _)| k.as_str())
            .expect("slot in range")
    }

    pub fn by_slot(&self, slot: usize) -> &[f64] {
        self.arrays
            .get_index(slot)
            .map(|(_, v)| v.as_slice())
            .expect("slot in range")
    }

    pub fn take_slot(&mut self, slot: usize) -> Vec<f64> {
        let (_, v) = self.arrays.get_index_mut(slot).expect("slot in range");
        debug_assert!(!v.is_empty(), "array taken twice");
        std::mem::take(v)
    }

    pub fn restore_slot(&mut self, slot: usize, data: Vec<f64>) {
        debug_assert_eq!(data.len(), self.grid.padded_len());
        let (_, v) = self.arrays.get_index_mut(slot).expect("slot in range");
        *v = data;
    }
}
