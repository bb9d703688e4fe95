//! Regular grids with a validity mask, and the data that lives on them.
//!
//! Cells are addressed two ways: by their flat raster index `y * nx + x`, and
//! by their position among the in-mask cells in scan order (y outer, x inner).
//! Every payload (observations, scalar fields) is stored in the latter order so
//! masked-out cells never carry a value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NOT_ACTIVE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    cell_size_km: f64,
    mask: Vec<bool>,
    active: Vec<u32>,
    slot: Vec<u32>,
}

/// Grid geometry as recorded in run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_km: f64,
    pub active_cells: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, cell_size_km: f64, mask: Vec<bool>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Validation(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(Error::Validation(format!(
                "cell size must be positive, got {cell_size_km}"
            )));
        }
        if mask.len() != nx * ny {
            return Err(Error::Dimension(format!(
                "mask has {} entries, grid has {} cells",
                mask.len(),
                nx * ny
            )));
        }
        if nx * ny >= NOT_ACTIVE as usize {
            return Err(Error::Capacity(format!("grid {nx}x{ny} too large")));
        }
        let mut active = Vec::new();
        let mut slot = vec![NOT_ACTIVE; nx * ny];
        for (flat, &inside) in mask.iter().enumerate() {
            if inside {
                slot[flat] = active.len() as u32;
                active.push(flat as u32);
            }
        }
        if active.is_empty() {
            return Err(Error::Validation("mask selects no cells".into()));
        }
        Ok(Grid {
            nx,
            ny,
            cell_size_km,
            mask,
            active,
            slot,
        })
    }

    /// Grid with every cell in the study region.
    pub fn full(nx: usize, ny: usize, cell_size_km: f64) -> Result<Self> {
        Self::new(nx, ny, cell_size_km, vec![true; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_full(&self) -> bool {
        self.active.len() == self.mask.len()
    }

    /// Same geometry and mask, different physical cell size.
    pub fn with_cell_size(&self, cell_size_km: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, cell_size_km, self.mask.clone())
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn in_mask(&self, x: usize, y: usize) -> bool {
        x < self.nx && y < self.ny && self.mask[y * self.nx + x]
    }

    /// Position of raster cell `(x, y)` among the in-mask cells.
    pub fn slot_of(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.nx || y >= self.ny {
            return None;
        }
        match self.slot[y * self.nx + x] {
            NOT_ACTIVE => None,
            s => Some(s as usize),
        }
    }

    /// Raster coordinates of the `slot`-th in-mask cell.
    pub fn cell_of_slot(&self, slot: usize) -> (usize, usize) {
        let flat = self.active[slot] as usize;
        (flat % self.nx, flat / self.nx)
    }

    pub fn active_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.active
            .iter()
            .map(move |&f| (f as usize % self.nx, f as usize / self.nx))
    }

    /// Center of a cell in continuous grid coordinates.
    pub fn center(&self, x: usize, y: usize) -> [f64; 2] {
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    pub fn slot_center(&self, slot: usize) -> [f64; 2] {
        let (x, y) = self.cell_of_slot(slot);
        self.center(x, y)
    }

    pub fn to_km(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.cell_size_km, p[1] * self.cell_size_km]
    }

    pub fn to_grid(&self, p_km: [f64; 2]) -> [f64; 2] {
        [p_km[0] / self.cell_size_km, p_km[1] / self.cell_size_km]
    }

    /// Length of the bounding-box diagonal in grid units.
    pub fn diagonal(&self) -> f64 {
        (self.nx as f64).hypot(self.ny as f64)
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            nx: self.nx,
            ny: self.ny,
            cell_size_km: self.cell_size_km,
            active_cells: self.active.len(),
        }
    }
}

/// Observation matrix: one time series per in-mask cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    grid: Grid,
    n_time: usize,
    // cell-major: values[slot * n_time + t]
    values: Vec<f64>,
}

impl ObservationMatrix {
    /// Builds from cell-major values (`values[slot * n_time + t]`).
    pub fn from_cell_major(grid: Grid, n_time: usize, values: Vec<f64>) -> Result<Self> {
        if n_time < 3 {
            return Err(Error::Validation(format!(
                "need at least 3 time steps, got {n_time}"
            )));
        }
        let expected = grid.active_count() * n_time;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {} cells x {} steps = {} values, got {}",
                grid.active_count(),
                n_time,
                expected,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at cell {} time {}",
                bad / n_time,
                bad % n_time
            )));
        }
        Ok(ObservationMatrix {
            grid,
            n_time,
            values,
        })
    }

    /// Builds from time-major values (`values[t * cells + slot]`), the on-disk order.
    pub fn from_time_major(grid: Grid, n_time: usize, values: Vec<f64>) -> Result<Self> {
        let cells = grid.active_count();
        if values.len() != cells * n_time {
            return Err(Error::Dimension(format!(
                "expected {} cells x {} steps = {} values, got {}",
                cells,
                n_time,
                cells * n_time,
                values.len()
            )));
        }
        let mut cell_major = vec![0.0; values.len()];
        for t in 0..n_time {
            for c in 0..cells {
                cell_major[c * n_time + t] = values[t * cells + c];
            }
        }
        Self::from_cell_major(grid, n_time, cell_major)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_cells(&self) -> usize {
        self.grid.active_count()
    }

    pub fn series(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.n_time..(slot + 1) * self.n_time]
    }

    pub fn value(&self, slot: usize, t: usize) -> f64 {
        self.values[slot * self.n_time + t]
    }

    pub fn cell_major(&self) -> &[f64] {
        &self.values
    }
}

/// One finite value per in-mask cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.active_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid has {} in-mask cells",
                values.len(),
                grid.active_count()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            let (x, y) = grid.cell_of_slot(bad);
            return Err(Error::Validation(format!(
                "non-finite field value at cell ({x}, {y})"
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        let n = grid.active_count();
        Self::new(grid, vec![value; n])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.grid.slot_of(x, y).map(|s| self.values[s])
    }

    /// `(min, max)` over the in-mask cells.
    pub fn extrema(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// A field in which some in-mask cells may have no value yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialField {
    grid: Grid,
    values: Vec<Option<f64>>,
}

impl PartialField {
    pub fn new(grid: Grid, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != grid.active_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid has {} in-mask cells",
                values.len(),
                grid.active_count()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite field value".into()));
        }
        Ok(PartialField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

impl From<ScalarField> for PartialField {
    fn from(f: ScalarField) -> Self {
        PartialField {
            values: f.values.into_iter().map(Some).collect(),
            grid: f.grid,
        }
    }
}
