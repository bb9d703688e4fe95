//! Fixed instances shared by the solver comparisons, the test suites and the
//! command-line `gen-grf` defaults.

use crate::cvt::{initial_generators, problem_on_grid, DiscreteProblem, GeneratorSet, InitMode};
use crate::error::Result;
use crate::grf::FieldSpecConfig;
use crate::grid::Grid;

pub const BENCHMARK_SIZE: usize = 40;
pub const BENCHMARK_K: usize = 16;

/// 40x40 grid with weight 1 inside a disk of radius 12 around (14, 14) and
/// 0.05 elsewhere.
pub fn two_level_problem() -> DiscreteProblem {
    let grid = Grid::full(BENCHMARK_SIZE, BENCHMARK_SIZE, 1.0).expect("valid grid");
    problem_on_grid(&grid, |x, y| {
        let c = grid.center(x, y);
        if (c[0] - 14.0).hypot(c[1] - 14.0) <= 12.0 {
            1.0
        } else {
            0.05
        }
    })
    .expect("positive weights")
}

pub fn two_level_init(seed: u64) -> Result<GeneratorSet> {
    initial_generators(&two_level_problem(), BENCHMARK_K, InitMode::Weighted, seed)
}

/// Synthetic observations with decorrelation scale 9 grid units.
pub fn benchmark_field_config(seed: u64) -> FieldSpecConfig {
    FieldSpecConfig {
        nx: BENCHMARK_SIZE,
        ny: BENCHMARK_SIZE,
        cell_size_km: 5.0,
        n_time: 1000,
        c0: 1.0,
        d0: 9.0,
        s0: 1.0,
        seed,
    }
}
