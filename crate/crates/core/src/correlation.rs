//! Local correlation statistics of gridded time series.
//!
//! The effective correlation of a cell is the mean Pearson correlation between
//! its series and the series of cells on a ring (annulus) of a given radius
//! around it. [`CorrelationEngine`] estimates it by Monte Carlo sampling over
//! the ring, or exactly by visiting every ring cell.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ObservationMatrix, PartialField, ScalarField};

/// Product-moment correlation of two equally long series, clamped to [-1, 1].
///
/// A series with zero variance yields [`Error::DegenerateSeries`].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 samples, got {}",
            a.len()
        )));
    }
    if is_constant(a) || is_constant(b) {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn is_constant(a: &[f64]) -> bool {
    a.iter().all(|&v| v == a[0])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Mixes a salt into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters of one Monte Carlo effective-correlation evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSampling {
    /// Ring radius in grid units, at least 1.
    pub radius: f64,
    pub n_samples: usize,
    /// Ring cells satisfy `radius - halfwidth <= dist <= radius + halfwidth`.
    pub halfwidth: f64,
    pub seed: u64,
}

impl RingSampling {
    pub fn new(radius: f64, n_samples: usize, halfwidth: f64, seed: u64) -> Result<Self> {
        let s = RingSampling {
            radius,
            n_samples,
            halfwidth,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius >= 1.0 && self.radius.is_finite()) {
            return Err(Error::Validation(format!("radius must be >= 1, got {}", self.radius)));
        }
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be positive".into()));
        }
        if !(self.halfwidth >= 0.5 && self.halfwidth.is_finite()) {
            return Err(Error::Validation(format!(
                "annulus halfwidth must be >= 0.5, got {}",
                self.halfwidth
            )));
        }
        Ok(())
    }
}

/// Integer offsets on the ring, the cell itself excluded.
pub fn ring_offsets(radius: f64, halfwidth: f64) -> Vec<(i64, i64)> {
    let lo = (radius - halfwidth).max(0.0);
    let hi = radius + halfwidth;
    let reach = hi.ceil() as i64;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if dx == 0 && dy == 0 {
                continue;
            }
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if d >= lo && d <= hi {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Result of an effective-correlation sweep over all in-mask cells.
#[derive(Debug, Clone)]
pub struct CorrelationMap {
    /// `None` where the ring was empty or the cell's own series is constant.
    pub field: PartialField,
    /// Successful correlation evaluations behind each cell's value.
    pub samples: Vec<usize>,
}

impl CorrelationMap {
    pub fn total_samples(&self) -> usize {
        self.samples.iter().sum()
    }

    /// Mean over the cells that have a value.
    pub fn spatial_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self.field.values().iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Observation matrix with each series centered and scaled to unit norm, so
/// the Pearson coefficient of two cells is a dot product.
pub struct CorrelationEngine<'a> {
    obs: &'a ObservationMatrix,
    unit: Vec<f64>,
    valid: Vec<bool>,
}

impl<'a> CorrelationEngine<'a> {
    pub fn new(obs: &'a ObservationMatrix) -> Self {
        let n = obs.n_time();
        let mut unit = vec![0.0; obs.n_cells() * n];
        let mut valid = vec![false; obs.n_cells()];
        for c in 0..obs.n_cells() {
            let s = obs.series(c);
            if is_constant(s) {
                continue;
            }
            let mean = s.iter().sum::<f64>() / n as f64;
            let ss: f64 = s.iter().map(|v| (v - mean) * (v - mean)).sum();
            if ss == 0.0 {
                continue;
            }
            let inv = 1.0 / ss.sqrt();
            for (dst, &v) in unit[c * n..(c + 1) * n].iter_mut().zip(s) {
                *dst = (v - mean) * inv;
            }
            valid[c] = true;
        }
        CorrelationEngine { obs, unit, valid }
    }

    pub fn observations(&self) -> &ObservationMatrix {
        self.obs
    }

    /// Whether the cell's series has nonzero variance.
    pub fn is_valid(&self, slot: usize) -> bool {
        self.valid[slot]
    }

    fn unit(&self, slot: usize) -> &[f64] {
        let n = self.obs.n_time();
        &self.unit[slot * n..(slot + 1) * n]
    }

    fn corr(&self, a: usize, b: usize) -> f64 {
        dot(self.unit(a), self.unit(b)).clamp(-1.0, 1.0)
    }

    fn ring_cells(&self, slot: usize, offsets: &[(i64, i64)]) -> Vec<usize> {
        let grid = self.obs.grid();
        let (x, y) = grid.cell_of_slot(slot);
        offsets
            .iter()
            .filter_map(|&(dx, dy)| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx < 0 || yy < 0 {
                    return None;
                }
                grid.slot_of(xx as usize, yy as usize)
            })
            .collect()
    }

    fn sample_cell(
        &self,
        slot: usize,
        offsets: &[(i64, i64)],
        params: &RingSampling,
    ) -> (Option<f64>, usize) {
        if !self.valid[slot] {
            return (None, 0);
        }
        let ring = self.ring_cells(slot, offsets);
        if ring.is_empty() {
            return (None, 0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(slot as u64);
        let max_attempts = 10 * params.n_samples;
        let (mut sum, mut used, mut attempts) = (0.0, 0usize, 0usize);
        while used < params.n_samples && attempts < max_attempts {
            attempts += 1;
            let other = ring[rng.random_range(0..ring.len())];
            if !self.valid[other] {
                continue;
            }
            sum += self.corr(slot, other);
            used += 1;
        }
        if used == 0 {
            (None, 0)
        } else {
            (Some((sum / used as f64).clamp(-1.0, 1.0)), used)
        }
    }

    /// Monte Carlo estimate for a single cell.
    pub fn estimate_at(&self, slot: usize, params: &RingSampling) -> Result<Option<f64>> {
        params.validate()?;
        let offsets = ring_offsets(params.radius, params.halfwidth);
        Ok(self.sample_cell(slot, &offsets, params).0)
    }

    /// Monte Carlo estimate for every in-mask cell. Each cell draws from its
    /// own stream of the seeded generator, so the result does not depend on
    /// how the cells are scheduled.
    pub fn map(&self, params: &RingSampling) -> Result<CorrelationMap> {
        params.validate()?;
        let offsets = ring_offsets(params.radius, params.halfwidth);
        let (values, samples): (Vec<_>, Vec<_>) = (0..self.obs.n_cells())
            .into_par_iter()
            .map(|slot| self.sample_cell(slot, &offsets, params))
            .unzip();
        if values.iter().all(Option::is_none) {
            return Err(Error::EmptyAnnulus {
                radius: params.radius,
            });
        }
        Ok(CorrelationMap {
            field: PartialField::new(self.obs.grid().clone(), values)?,
            samples,
        })
    }

    /// Exact ring average for every cell, visiting all non-degenerate ring cells.
    pub fn exhaustive_map(&self, radius: f64, halfwidth: f64) -> Result<CorrelationMap> {
        RingSampling::new(radius, 1, halfwidth, 0)?;
        let offsets = ring_offsets(radius, halfwidth);
        let (values, samples): (Vec<_>, Vec<_>) = (0..self.obs.n_cells())
            .into_par_iter()
            .map(|slot| {
                if !self.valid[slot] {
                    return (None, 0);
                }
                let ring: Vec<usize> = self
                    .ring_cells(slot, &offsets)
                    .into_iter()
                    .filter(|&o| self.valid[o])
                    .collect();
                if ring.is_empty() {
                    return (None, 0);
                }
                let sum: f64 = ring.iter().map(|&o| self.corr(slot, o)).sum();
                (Some((sum / ring.len() as f64).clamp(-1.0, 1.0)), ring.len())
            })
            .unzip();
        if values.iter().all(Option::is_none) {
            return Err(Error::EmptyAnnulus { radius });
        }
        Ok(CorrelationMap {
            field: PartialField::new(self.obs.grid().clone(), values)?,
            samples,
        })
    }
}

pub fn effective_correlation_map(obs: &ObservationMatrix, params: &RingSampling) -> Result<CorrelationMap> {
    CorrelationEngine::new(obs).map(params)
}

/// Mean correlation as a function of integer separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlogram {
    pub lags: Vec<usize>,
    pub mean_corr: Vec<f64>,
    pub sample_counts: Vec<usize>,
}

impl Correlogram {
    pub fn new(lags: Vec<usize>, mean_corr: Vec<f64>, sample_counts: Vec<usize>) -> Result<Self> {
        if lags.is_empty() || lags.len() != mean_corr.len() || lags.len() != sample_counts.len() {
            return Err(Error::Dimension(format!(
                "correlogram columns: {} lags, {} means, {} counts",
                lags.len(),
                mean_corr.len(),
                sample_counts.len()
            )));
        }
        if lags[0] < 1 || lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "lags must start at >= 1 and increase strictly".into(),
            ));
        }
        if mean_corr.iter().any(|c| !(-1.0..=1.0).contains(c)) {
            return Err(Error::Validation("mean correlation outside [-1, 1]".into()));
        }
        if sample_counts.contains(&0) {
            return Err(Error::Validation("every lag needs at least one sample".into()));
        }
        Ok(Correlogram {
            lags,
            mean_corr,
            sample_counts,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lag,mean_corr,samples")?;
        for ((l, c), n) in self.lags.iter().zip(&self.mean_corr).zip(&self.sample_counts) {
            writeln!(w, "{l},{c},{n}")?;
        }
        Ok(())
    }
}

/// Domain-mean effective correlation at lags `1..=max_lag`. Each lag uses its
/// own seed derived from `seed`; lags where no cell has a ring are dropped.
pub fn correlogram(
    obs: &ObservationMatrix,
    max_lag: usize,
    n_samples: usize,
    halfwidth: f64,
    seed: u64,
) -> Result<Correlogram> {
    let grid = obs.grid();
    let limit = grid.nx().max(grid.ny());
    if max_lag < 1 || max_lag > limit {
        return Err(Error::Validation(format!(
            "max_lag must be in 1..={limit}, got {max_lag}"
        )));
    }
    let engine = CorrelationEngine::new(obs);
    let (mut lags, mut means, mut counts) = (Vec::new(), Vec::new(), Vec::new());
    for lag in 1..=max_lag {
        let params = RingSampling::new(lag as f64, n_samples, halfwidth, derive_seed(seed, lag as u64))?;
        let map = match engine.map(&params) {
            Ok(m) => m,
            Err(Error::EmptyAnnulus { .. }) => continue,
            Err(e) => return Err(e),
        };
        // map() guarantees at least one cell has a value
        let mean = map.spatial_mean().unwrap();
        lags.push(lag);
        means.push(mean.clamp(-1.0, 1.0));
        counts.push(map.total_samples());
    }
    if lags.is_empty() {
        return Err(Error::EmptyAnnulus { radius: 1.0 });
    }
    Correlogram::new(lags, means, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decorrelation {
    /// Lag in grid units.
    pub lag: usize,
    /// False when the curve never drops below 1/e; `lag` is then the last lag.
    pub decorrelated: bool,
}

/// Smallest lag whose mean correlation is strictly below 1/e.
pub fn decorrelation_distance(c: &Correlogram) -> Decorrelation {
    let threshold = (-1f64).exp();
    match c.lags.iter().zip(&c.mean_corr).find(|(_, &m)| m < threshold) {
        Some((&lag, _)) => Decorrelation {
            lag,
            decorrelated: true,
        },
        None => Decorrelation {
            lag: *c.lags.last().unwrap(),
            decorrelated: false,
        },
    }
}

fn nearest_with_value(known: &[(usize, [f64; 2], f64)], p: [f64; 2]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for &(_, q, v) in known {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        // strict: ties go to the earliest cell in scan order
        if d < best.0 {
            best = (d, v);
        }
    }
    best.1
}

// exact at both ends, so integer sample positions reproduce the input
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Fills missing cells from their nearest valued neighbor, then resamples the
/// field bilinearly onto a grid refined by `factor` in each direction.
///
/// A refined cell is in the mask iff the coarse cell containing it is. The
/// output never leaves the input's value range.
pub fn interpolate_field(f: &PartialField, factor: usize) -> Result<ScalarField> {
    if factor == 0 {
        return Err(Error::Validation("interpolation factor must be >= 1".into()));
    }
    let grid = f.grid();
    let known: Vec<(usize, [f64; 2], f64)> = f
        .values()
        .iter()
        .enumerate()
        .filter_map(|(s, v)| v.map(|v| (s, grid.slot_center(s), v)))
        .collect();
    if known.is_empty() {
        return Err(Error::Validation("field has no values to interpolate from".into()));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    // complete lattice, masked-out cells extended from the nearest known value
    let mut lattice = vec![0.0; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            lattice[y * nx + x] = match grid.slot_of(x, y).and_then(|s| f.values()[s]) {
                Some(v) => v,
                None => nearest_with_value(&known, grid.center(x, y)),
            };
        }
    }

    let (fnx, fny) = (nx * factor, ny * factor);
    let mut mask = vec![false; fnx * fny];
    for y in 0..fny {
        for x in 0..fnx {
            mask[y * fnx + x] = grid.in_mask(x / factor, y / factor);
        }
    }
    let fine = Grid::new(fnx, fny, grid.cell_size_km() / factor as f64, mask)?;
    let k = factor as f64;
    let axis = |i: usize, n: usize| -> (usize, f64) {
        // position in coarse index space, where coarse cell i is centered at i
        let u = ((i as f64 + 0.5) / k - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (u.floor() as usize).min(n - 2);
        (i0, u - i0 as f64)
    };
    let values = fine
        .active_cells()
        .map(|(x, y)| {
            let (i0, tx) = axis(x, nx);
            let (j0, ty) = axis(y, ny);
            let v00 = lattice[j0 * nx + i0];
            let v10 = lattice[j0 * nx + i0 + 1];
            let v01 = lattice[(j0 + 1) * nx + i0];
            let v11 = lattice[(j0 + 1) * nx + i0 + 1];
            let lo = v00.min(v10).min(v01).min(v11);
            let hi = v00.max(v10).max(v01).max(v11);
            lerp(lerp(v00, v10, tx), lerp(v01, v11, tx), ty).clamp(lo, hi)
        })
        .collect();
    ScalarField::new(fine, values)
}
