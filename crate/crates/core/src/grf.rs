//! Exact Gaussian random field synthesis on a masked grid.
//!
//! The covariance between distinct in-mask cells is the exponential-nugget
//! model evaluated at their center distance; the diagonal is 1. Samples are
//! drawn as `L z` with `L` the Cholesky factor and `z` standard normal.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ObservationMatrix};
use crate::variogram::ExponentialNugget;

/// Dense factorization limit on the number of in-mask cells.
pub const MAX_GRF_CELLS: usize = 10_000;

const INITIAL_JITTER: f64 = 1e-10;
const JITTER_RETRIES: usize = 3;

#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub grid: Grid,
    pub n_time: usize,
    pub model: ExponentialNugget,
    pub seed: u64,
}

/// Serializable parameters for [`FieldSpec`] (the grid is built from these).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldSpecConfig {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_km: f64,
    pub n_time: usize,
    pub c0: f64,
    pub d0: f64,
    pub s0: f64,
    pub seed: u64,
}

impl FieldSpecConfig {
    pub fn to_spec(&self) -> Result<FieldSpec> {
        Ok(FieldSpec {
            grid: Grid::full(self.nx, self.ny, self.cell_size_km)?,
            n_time: self.n_time,
            model: ExponentialNugget::new(self.c0, self.d0, self.s0)?,
            seed: self.seed,
        })
    }
}

/// Holds the covariance factor so that many realizations can share one
/// factorization.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    grid: Grid,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GrfSampler {
    pub fn new(grid: &Grid, model: &ExponentialNugget) -> Result<Self> {
        model.validate()?;
        let n = grid.active_count();
        if n > MAX_GRF_CELLS {
            return Err(Error::Capacity(format!(
                "{n} in-mask cells exceeds the dense factorization cap of {MAX_GRF_CELLS}"
            )));
        }
        let centers: Vec<[f64; 2]> = (0..n).map(|s| grid.slot_center(s)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                let d = (centers[i][0] - centers[j][0]).hypot(centers[i][1] - centers[j][1]);
                model.eval(d)
            }
        });

        let mut jitter = 0.0;
        for attempt in 0..=JITTER_RETRIES {
            let mut m = cov.clone();
            if attempt > 0 {
                jitter = INITIAL_JITTER * 10f64.powi(attempt as i32 - 1);
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = m.cholesky() {
                return Ok(GrfSampler {
                    grid: grid.clone(),
                    factor: chol.unpack(),
                    jitter,
                });
            }
        }
        let min_eig = SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Err(Error::Numerical(format!(
            "covariance not positive definite after jitter {jitter:e}; smallest eigenvalue ~ {min_eig:e}"
        )))
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `n_time` independent realizations, deterministic in `seed`.
    pub fn sample(&self, n_time: usize, seed: u64) -> Result<ObservationMatrix> {
        let n = self.grid.active_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // column t holds the standard normals for time step t
        let z = DMatrix::from_iterator(
            n,
            n_time,
            (0..n * n_time).map(|_| StandardNormal.sample(&mut rng)),
        );
        let y = &self.factor * z;
        let cell_major = y.transpose();
        ObservationMatrix::from_cell_major(self.grid.clone(), n_time, cell_major.as_slice().to_vec())
    }
}

pub fn generate_grf(spec: &FieldSpec) -> Result<ObservationMatrix> {
    GrfSampler::new(&spec.grid, &spec.model)?.sample(spec.n_time, spec.seed)
}
