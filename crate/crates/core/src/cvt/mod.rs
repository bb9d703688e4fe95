//! Discrete centroidal Voronoi tessellations.
//!
//! The data sites `y_j` carry weights `rho(y_j)`; a generator set `x_i`
//! partitions them by nearest generator, and the tessellation energy is
//!
//! ```text
//! G(x) = sum_i sum_{j in V_i} rho(y_j) * |x_i - y_j|^2
//! ```
//!
//! Its minimizers place every generator at the weighted centroid of its own
//! cell. [`lloyd`] iterates that fixed point directly, [`tn`] minimizes `G`
//! with a truncated-Newton method.

pub mod corr_energy;
pub mod lloyd;
pub mod tn;

use std::collections::HashSet;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample_weighted;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub use corr_energy::correlation_energy;
pub use lloyd::{lloyd_solve, lloyd_solve_with, lloyd_step, LloydConfig};
pub use tn::{tn_solve, ArmijoConfig, FdStep, TnConfig};

pub type Point = [f64; 2];

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Fixed weighted data sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProblem {
    points: Vec<Point>,
    weights: Vec<f64>,
    bbox: (Point, Point),
}

impl DiscreteProblem {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("problem has no data points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(j) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Validation(format!(
                "weight {} at point {j} is not positive",
                weights[j]
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite point coordinate".into()));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if !seen.insert((p[0].to_bits(), p[1].to_bits())) {
                return Err(Error::Validation(format!("duplicate data point {p:?}")));
            }
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        Ok(DiscreteProblem {
            points,
            weights,
            bbox: (lo, hi),
        })
    }

    /// Data sites at the in-mask cell centers of a density field.
    pub fn from_density(density: &ScalarField) -> Result<Self> {
        let grid = density.grid();
        let points = (0..grid.active_count()).map(|s| grid.slot_center(s)).collect();
        Self::new(points, density.values().to_vec())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box `(min, max)` of the data sites.
    pub fn bounding_box(&self) -> (Point, Point) {
        self.bbox
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox;
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    }

    /// Same sites with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.points.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }

    /// Same weights with every site shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Result<Self> {
        Self::new(
            self.points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1]])
                .collect(),
            self.weights.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    positions: Vec<Point>,
}

impl GeneratorSet {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Validation("generator set is empty".into()));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite generator coordinate".into()));
        }
        Ok(GeneratorSet { positions })
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn translated(&self, offset: Point) -> Self {
        GeneratorSet {
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1]])
                .collect(),
        }
    }

    pub(crate) fn from_flat(flat: &[f64]) -> Self {
        GeneratorSet {
            positions: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        }
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// CSV `id,x_grid,y_grid,x_km,y_km`, km = grid coordinate x cell size.
    pub fn write_csv<W: Write>(&self, mut w: W, cell_size_km: f64) -> std::io::Result<()> {
        writeln!(w, "id,x_grid,y_grid,x_km,y_km")?;
        for (i, p) in self.positions.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{}",
                p[0],
                p[1],
                p[0] * cell_size_km,
                p[1] * cell_size_km
            )?;
        }
        Ok(())
    }
}

pub(crate) fn nearest(gens: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = dist2(gens[0], p);
    for (i, &g) in gens.iter().enumerate().skip(1) {
        let d = dist2(g, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Nearest generator for every data site; ties go to the smaller index.
pub fn assign(problem: &DiscreteProblem, gens: &GeneratorSet) -> Vec<usize> {
    problem
        .points
        .iter()
        .map(|&p| nearest(&gens.positions, p))
        .collect()
}

/// Tessellation energy at the current Voronoi assignment.
pub fn energy(problem: &DiscreteProblem, gens: &GeneratorSet) -> f64 {
    problem
        .points
        .iter()
        .zip(&problem.weights)
        .map(|(&p, &w)| w * dist2(gens.positions[nearest(&gens.positions, p)], p))
        .sum()
}

/// Energy, gradient and per-cell moments at one generator configuration.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: f64,
    /// Gradient with the assignment held at the current Voronoi partition.
    pub gradient: Vec<Point>,
    /// Total weight owned by each generator.
    pub mass: Vec<f64>,
    /// Weighted first moments `sum rho_j y_j` per generator.
    pub moment: Vec<Point>,
}

impl Evaluation {
    pub fn empty(&self) -> Vec<bool> {
        self.mass.iter().map(|&m| m == 0.0).collect()
    }

    pub fn has_empty(&self) -> bool {
        self.mass.contains(&0.0)
    }

    /// Weighted centroid of generator `i`'s cell, `None` if the cell is empty.
    pub fn centroid(&self, i: usize) -> Option<Point> {
        let m = self.mass[i];
        (m > 0.0).then(|| [self.moment[i][0] / m, self.moment[i][1] / m])
    }

    /// Max-abs component of the gradient.
    pub fn grad_max_norm(&self) -> f64 {
        self.gradient
            .iter()
            .flat_map(|g| [g[0].abs(), g[1].abs()])
            .fold(0.0, f64::max)
    }

    pub(crate) fn flat_gradient(&self) -> Vec<f64> {
        self.gradient.iter().flat_map(|g| [g[0], g[1]]).collect()
    }
}

pub fn evaluate(problem: &DiscreteProblem, gens: &GeneratorSet) -> Evaluation {
    let k = gens.k();
    let mut energy = 0.0;
    let mut mass = vec![0.0; k];
    let mut moment = vec![[0.0; 2]; k];
    for (&p, &w) in problem.points.iter().zip(&problem.weights) {
        let i = nearest(&gens.positions, p);
        energy += w * dist2(gens.positions[i], p);
        mass[i] += w;
        moment[i][0] += w * p[0];
        moment[i][1] += w * p[1];
    }
    // sum_j 2 rho_j (x_i - y_j) = 2 (m_i x_i - moment_i)
    let gradient = gens
        .positions
        .iter()
        .zip(mass.iter().zip(&moment))
        .map(|(x, (&m, mo))| {
            if m == 0.0 {
                [0.0, 0.0]
            } else {
                [2.0 * (m * x[0] - mo[0]), 2.0 * (m * x[1] - mo[1])]
            }
        })
        .collect();
    Evaluation {
        energy,
        gradient,
        mass,
        moment,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub grad: Vec<Point>,
    /// Generators that own no data site (their gradient is zero).
    pub empty: Vec<bool>,
}

pub fn gradient(problem: &DiscreteProblem, gens: &GeneratorSet) -> Gradient {
    let e = evaluate(problem, gens);
    Gradient {
        empty: e.empty(),
        grad: e.gradient,
    }
}

/// Largest distance between a non-empty generator and its cell's centroid.
pub fn centroid_residual(problem: &DiscreteProblem, gens: &GeneratorSet) -> f64 {
    let e = evaluate(problem, gens);
    (0..gens.k())
        .filter_map(|i| e.centroid(i).map(|c| dist2(c, gens.positions[i]).sqrt()))
        .fold(0.0, f64::max)
}

/// Moves every empty generator onto a data site drawn with probability
/// proportional to its weight, skipping sites already occupied by a
/// generator. Returns the number of generators moved.
pub(crate) fn relocate_empty<R: Rng>(
    problem: &DiscreteProblem,
    gens: &mut GeneratorSet,
    empty: &[bool],
    rng: &mut R,
) -> usize {
    if !empty.iter().any(|&e| e) {
        return 0;
    }
    let dist = WeightedIndex::new(&problem.weights).expect("weights are positive");
    let mut moved = 0;
    for i in (0..gens.k()).filter(|&i| empty[i]) {
        let mut site = problem.points[dist.sample(rng)];
        for _ in 0..64 {
            if !gens.positions.contains(&site) {
                break;
            }
            site = problem.points[dist.sample(rng)];
        }
        gens.positions[i] = site;
        moved += 1;
    }
    moved
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Distinct data sites drawn with probability proportional to weight.
    #[default]
    Weighted,
    /// Distinct data sites drawn uniformly.
    Uniform,
}

pub fn initial_generators(
    problem: &DiscreteProblem,
    k: usize,
    mode: InitMode,
    seed: u64,
) -> Result<GeneratorSet> {
    if k == 0 || k > problem.len() {
        return Err(Error::Config(format!(
            "cannot place {k} generators on {} data points",
            problem.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = match mode {
        InitMode::Weighted => sample_weighted(&mut rng, problem.len(), |j| problem.weights[j], k)
            .map_err(|e| Error::Numerical(format!("weighted sampling failed: {e}")))?
            .into_vec(),
        InitMode::Uniform => rand::seq::index::sample(&mut rng, problem.len(), k).into_vec(),
    };
    GeneratorSet::new(idx.into_iter().map(|j| problem.points[j]).collect())
}

/// `k` generators uniformly distributed over the bounding box of the sites.
pub fn uniform_random_generators(problem: &DiscreteProblem, k: usize, seed: u64) -> Result<GeneratorSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = problem.bbox;
    let ux = Uniform::new_inclusive(lo[0], hi[0]).map_err(|e| Error::Numerical(e.to_string()))?;
    let uy = Uniform::new_inclusive(lo[1], hi[1]).map_err(|e| Error::Numerical(e.to_string()))?;
    GeneratorSet::new((0..k).map(|_| [ux.sample(&mut rng), uy.sample(&mut rng)]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtResult {
    pub generators: GeneratorSet,
    /// Entry 0 is the starting point; one entry per accepted outer iteration.
    pub energy_trace: Vec<TraceEntry>,
    pub status: Status,
}

impl CvtResult {
    pub fn final_energy(&self) -> f64 {
        self.energy_trace.last().map(|t| t.energy).unwrap_or(f64::NAN)
    }

    pub fn initial_energy(&self) -> f64 {
        self.energy_trace.first().map(|t| t.energy).unwrap_or(f64::NAN)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.energy_trace.last().map(|t| t.grad_norm).unwrap_or(f64::NAN)
    }

    /// Number of outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.energy_trace.len().saturating_sub(1)
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,energy,grad_norm")?;
        for t in &self.energy_trace {
            writeln!(w, "{},{},{}", t.iter, t.energy, t.grad_norm)?;
        }
        Ok(())
    }
}

/// Whether `status = converged` is backed by the centroid condition.
pub fn is_fixed_point(problem: &DiscreteProblem, gens: &GeneratorSet, grid_diagonal: f64) -> bool {
    centroid_residual(problem, gens) <= 1e-6 * grid_diagonal
}

/// Uniform-weight sites at the centers of an `n x n` lattice covering `[0, side]^2`.
pub fn uniform_square(n: usize, side: f64) -> DiscreteProblem {
    let h = side / n as f64;
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
        }
    }
    DiscreteProblem::new(points, vec![1.0; n * n]).expect("valid grid")
}

/// Problem on a grid's in-mask cell centers with a weight per cell.
pub fn problem_on_grid(grid: &Grid, weight: impl Fn(usize, usize) -> f64) -> Result<DiscreteProblem> {
    let (points, weights) = grid
        .active_cells()
        .map(|(x, y)| (grid.center(x, y), weight(x, y)))
        .unzip();
    DiscreteProblem::new(points, weights)
}
