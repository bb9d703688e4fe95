//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use gauge_cvt::cvt::{DiscreteProblem, GeneratorSet};
use gauge_cvt::grid::{Grid, ObservationMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook two-pass product-moment correlation.
pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Index of the closest point by a plain scan, ties to the lower index.
pub fn closest(points: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in points.iter().enumerate() {
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Correlation-metric energy by direct summation: each cell is charged
/// `2 eps^2 (1 - corr)` against the cell its generator sits on.
pub fn correlation_energy_brute(obs: &ObservationMatrix, gens: &GeneratorSet, eps: f64) -> f64 {
    let grid = obs.grid();
    let centers: Vec<[f64; 2]> = grid.active_cells().map(|(x, y)| grid.center(x, y)).collect();
    let hosts: Vec<usize> = gens.positions().iter().map(|&g| closest(&centers, g)).collect();
    let mut total = 0.0;
    for (s, &c) in centers.iter().enumerate() {
        let host = hosts[closest(gens.positions(), c)];
        let corr = if s == host { 1.0 } else { pearson_direct(obs.series(s), obs.series(host)) };
        total += 2.0 * eps * eps * (1.0 - corr);
    }
    total
}

/// Sylvester Hadamard matrix of order `2^p`, rows as `i8` vectors.
pub fn hadamard(p: u32) -> Vec<Vec<i8>> {
    let mut h = vec![vec![1i8]];
    for _ in 0..p {
        let n = h.len();
        let mut next = vec![vec![0i8; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = h[i][j];
                next[i][j + n] = h[i][j];
                next[i + n][j] = h[i][j];
                next[i + n][j + n] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

/// Observations whose pairwise sample correlation is exactly 1/2: cell `j`
/// holds `h_0 + h_{j+1}` for mutually orthogonal zero-mean Hadamard rows.
pub fn half_correlated(grid: Grid) -> ObservationMatrix {
    let n = grid.active_count();
    let mut p = 1;
    while (1usize << p) < n + 2 {
        p += 1;
    }
    let h = hadamard(p);
    let t = h.len();
    let mut values = Vec::with_capacity(n * t);
    for j in 0..n {
        values.extend((0..t).map(|k| (h[1][k] + h[j + 2][k]) as f64));
    }
    ObservationMatrix::from_cell_major(grid, t, values).unwrap()
}

pub fn random_series(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
}

/// Scattered sites with random positive weights and random generators.
pub fn random_problem(seed: u64, n: usize, k: usize) -> (DiscreteProblem, GeneratorSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let gens = (0..k)
        .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
        .collect();
    (DiscreteProblem::new(points, weights).unwrap(), GeneratorSet::new(gens).unwrap())
}

/// Random weights on a small grid, generators at distinct random sites.
pub fn random_grid_problem(seed: u64) -> (DiscreteProblem, GeneratorSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.random_range(8..30);
    let ny = rng.random_range(8..30);
    let k = rng.random_range(1..12);
    let grid = Grid::full(nx, ny, 1.0).unwrap();
    let weights: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.05..3.0)).collect();
    let problem = gauge_cvt::cvt::problem_on_grid(&grid, |x, y| weights[y * nx + x]).unwrap();
    let init = gauge_cvt::cvt::initial_generators(&problem, k, gauge_cvt::cvt::InitMode::Uniform, seed).unwrap();
    (problem, init)
}

/// Mean of `2 * max site-to-generator distance` over the cells lying wholly
/// on each side of the vertical line `x = split`, as (left, right).
pub fn half_diameters(problem: &DiscreteProblem, gens: &GeneratorSet, split: f64) -> (f64, f64, usize, usize) {
    let g = gens.positions();
    let mut diam = vec![0.0f64; g.len()];
    let mut side = vec![(true, true); g.len()];
    for &p in problem.points() {
        let i = closest(g, p);
        diam[i] = diam[i].max(2.0 * (p[0] - g[i][0]).hypot(p[1] - g[i][1]));
        if p[0] < split {
            side[i].1 = false;
        } else {
            side[i].0 = false;
        }
    }
    let mean = |f: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = (0..g.len()).filter(|&i| f(i)).map(|i| diam[i]).collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (left, nl) = mean(&|i| side[i].0 && !side[i].1);
    let (right, nr) = mean(&|i| side[i].1 && !side[i].0);
    (left, right, nl, nr)
}

pub fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
