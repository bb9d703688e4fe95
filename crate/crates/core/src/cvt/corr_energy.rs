//! Correlation-metric tessellation energy,
//! `sum_i sum_{x in V_i} 2 eps^2 (1 - corr(x, x_i))`, evaluated directly from
//! the observation series. Quadratic in the number of cells, so only meant
//! for small instances.

use super::{dist2, nearest, GeneratorSet};
use crate::correlation::pearson;
use crate::error::{Error, Result};
use crate::grid::ObservationMatrix;

pub const MAX_CORRELATION_ENERGY_CELLS: usize = 2500;

/// In-mask slot whose center is nearest to `p` (ties to the lower slot).
fn snap(obs: &ObservationMatrix, p: [f64; 2]) -> usize {
    let grid = obs.grid();
    let mut best = (f64::INFINITY, 0);
    for s in 0..grid.active_count() {
        let d = dist2(grid.slot_center(s), p);
        if d < best.0 {
            best = (d, s);
        }
    }
    best.1
}

/// Generators are snapped to their nearest in-mask cell for their series;
/// cells are assigned to the nearest (unsnapped) generator. A cell hosting
/// its own generator contributes zero.
pub fn correlation_energy(obs: &ObservationMatrix, gens: &GeneratorSet, epsilon: f64) -> Result<f64> {
    let grid = obs.grid();
    let n = grid.active_count();
    if n > MAX_CORRELATION_ENERGY_CELLS {
        return Err(Error::Capacity(format!(
            "{n} in-mask cells exceeds the correlation-energy limit of {MAX_CORRELATION_ENERGY_CELLS}"
        )));
    }
    if !epsilon.is_finite() {
        return Err(Error::Validation(format!("epsilon must be finite, got {epsilon}")));
    }
    let hosts: Vec<usize> = gens.positions().iter().map(|&p| snap(obs, p)).collect();
    for (i, &h) in hosts.iter().enumerate() {
        if obs.series(h).iter().all(|&v| v == obs.series(h)[0]) {
            let (x, y) = grid.cell_of_slot(h);
            return Err(Error::DegenerateSeries(format!(
                "generator {i} sits on cell ({x}, {y}) whose series is constant"
            )));
        }
    }
    let scale = 2.0 * epsilon * epsilon;
    let mut total = 0.0;
    for s in 0..n {
        let i = nearest(gens.positions(), grid.slot_center(s));
        let host = hosts[i];
        if s == host {
            continue;
        }
        let c = pearson(obs.series(s), obs.series(host)).map_err(|e| match e {
            Error::DegenerateSeries(_) => {
                let (x, y) = grid.cell_of_slot(s);
                Error::DegenerateSeries(format!("cell ({x}, {y}) has a constant series"))
            }
            other => other,
        })?;
        total += scale * (1.0 - c);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn identical_series_give_zero() {
        let grid = Grid::full(5, 4, 1.0).unwrap();
        let series: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let values = (0..20).flat_map(|_| series.clone()).collect();
        let obs = ObservationMatrix::from_cell_major(grid, 20, values).unwrap();
        let gens = GeneratorSet::new(vec![[1.2, 0.3], [4.0, 3.9]]).unwrap();
        assert_eq!(correlation_energy(&obs, &gens, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_generator_named() {
        let grid = Grid::full(3, 3, 1.0).unwrap();
        let mut values: Vec<f64> = (0..9 * 5).map(|i| ((i * 37) % 11) as f64).collect();
        for t in 0..5 {
            values[4 * 5 + t] = 2.0;
        }
        let obs = ObservationMatrix::from_cell_major(grid, 5, values).unwrap();
        let err = correlation_energy(&obs, &GeneratorSet::new(vec![[1.5, 1.5]]).unwrap(), 1.0).unwrap_err();
        assert!(err.to_string().contains("generator 0"), "{err}");
    }

    #[test]
    fn capacity_limit() {
        let grid = Grid::full(51, 50, 1.0).unwrap();
        let values = (0..2550 * 3).map(|i| i as f64).collect();
        let obs = ObservationMatrix::from_cell_major(grid, 3, values).unwrap();
        let gens = GeneratorSet::new(vec![[0.0, 0.0]]).unwrap();
        assert!(matches!(correlation_energy(&obs, &gens, 1.0), Err(Error::Capacity(_))));
    }
}
