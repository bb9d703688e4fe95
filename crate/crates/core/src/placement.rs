//! End-to-end site selection and comparison with an existing network.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::{
    correlogram, decorrelation_distance, derive_seed, effective_correlation_map, interpolate_field, Correlogram,
    Decorrelation, RingSampling,
};
use crate::cvt::{
    energy, initial_generators, lloyd_solve_with, tn_solve, CvtResult, DiscreteProblem, GeneratorSet, InitMode,
    LloydConfig, Point, Status, TnConfig,
};
use crate::density::{build_density, count_below_threshold, select_alpha, AlphaSelection, DensityParams, DEFAULT_ALPHA_MAX};
use crate::error::{Error, Result, StageExt};
use crate::grid::{GridSummary, ObservationMatrix, ScalarField};
use crate::io::{encode_field, encode_observations, write_file};
use crate::variogram::{fit_exponential_nugget, VariogramFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Lloyd,
    #[default]
    Tn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub c_tol: f64,
    pub k_g: usize,
    pub r: f64,
    pub big_r: f64,
    pub mc_samples: usize,
    pub annulus_halfwidth: f64,
    pub interpolation_factor: usize,
    /// Largest correlogram lag; `None` means `max(nx, ny) / 2`.
    pub max_lag: Option<usize>,
    pub seed: u64,
    pub solver: SolverKind,
    pub lloyd: LloydConfig,
    pub tn: TnConfig,
    /// Fixed exponent; skips the selection from `k_g`.
    pub alpha_override: Option<u32>,
    pub alpha_max: u32,
    pub init: InitMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            c_tol: 0.1,
            k_g: 0,
            r: 1e-6,
            big_r: 1.0,
            mc_samples: 100,
            annulus_halfwidth: 1.0,
            interpolation_factor: 4,
            max_lag: None,
            seed: 0,
            solver: SolverKind::default(),
            lloyd: LloydConfig::default(),
            tn: TnConfig::default(),
            alpha_override: None,
            alpha_max: DEFAULT_ALPHA_MAX,
            init: InitMode::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.c_tol > 0.0 && self.c_tol < 1.0) {
            return bad(format!("c_tol must be in (0, 1), got {}", self.c_tol));
        }
        if self.k_g < 1 {
            return bad("k_g must be >= 1".into());
        }
        if !(self.r > 0.0 && self.r.is_finite()) || !(self.big_r > 0.0 && self.big_r.is_finite()) {
            return bad(format!("r and big_r must be positive, got {} and {}", self.r, self.big_r));
        }
        if self.mc_samples < 1 || self.interpolation_factor < 1 || self.alpha_max < 1 {
            return bad("mc_samples, interpolation_factor and alpha_max must be positive".into());
        }
        if !(self.annulus_halfwidth >= 0.5 && self.annulus_halfwidth.is_finite()) {
            return bad(format!("annulus_halfwidth must be >= 0.5, got {}", self.annulus_halfwidth));
        }
        if self.max_lag == Some(0) {
            return bad("max_lag must be positive".into());
        }
        if self.alpha_override == Some(0) {
            return bad("alpha_override must be >= 1".into());
        }
        if !(self.lloyd.tol > 0.0) || self.lloyd.max_iter == 0 {
            return bad("lloyd.tol and lloyd.max_iter must be positive".into());
        }
        self.tn.validate()
    }

    fn density_params(&self, alpha: u32) -> DensityParams {
        DensityParams {
            r: self.r,
            big_r: self.big_r,
            alpha,
        }
    }
}

/// Independent stream seeds for the randomized stages of one run.
/// Independent seeds for the randomized pipeline stages, derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub correlogram: u64,
    pub map: u64,
    pub init: u64,
    pub solver: u64,
}

impl StageSeeds {
    pub fn new(seed: u64) -> Self {
        StageSeeds {
            correlogram: derive_seed(seed, 1),
            map: derive_seed(seed, 2),
            init: derive_seed(seed, 3),
            solver: derive_seed(seed, 4),
        }
    }
}

/// SHA-256 of the binary encoding of the observations.
pub fn observation_digest(obs: &ObservationMatrix) -> String {
    hex::encode(Sha256::digest(encode_observations(obs)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementReport {
    pub config: PipelineConfig,
    pub input_digest: String,
    pub grid: GridSummary,
    pub correlogram: Correlogram,
    /// Fitted correlogram model, when the curve supports a fit.
    pub variogram: Option<VariogramFit>,
    pub decorrelation: Decorrelation,
    pub decorrelation_km: f64,
    /// Effective correlation at the decorrelation lag, on the refined grid.
    pub correlation: ScalarField,
    /// Coarse cells without a map value before interpolation.
    pub missing_cells: usize,
    pub alpha: AlphaSelection,
    pub alpha_overridden: bool,
    pub density: ScalarField,
    pub initial_generators: GeneratorSet,
    pub result: CvtResult,
}

impl PlacementReport {
    pub fn fine_grid(&self) -> GridSummary {
        self.density.grid().summary()
    }

    pub fn problem(&self) -> Result<DiscreteProblem> {
        DiscreteProblem::from_density(&self.density)
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            input_digest: self.input_digest.clone(),
            seed: self.config.seed,
            grid: self.grid.clone(),
            fine_grid: self.fine_grid(),
            decorrelation_lag: self.decorrelation.lag,
            decorrelation_km: self.decorrelation_km,
            decorrelated: self.decorrelation.decorrelated,
            variogram: self.variogram,
            missing_cells: self.missing_cells,
            alpha: self.alpha.alpha,
            alpha_overridden: self.alpha_overridden,
            k_at_alpha: self.alpha.k_at_alpha,
            over_threshold: self.alpha.over_threshold,
            alpha_trace: self.alpha.trace.clone(),
            solver: self.config.solver,
            status: self.result.status,
            iterations: self.result.iterations(),
            initial_energy: self.result.initial_energy(),
            final_energy: self.result.final_energy(),
            final_grad_norm: self.result.final_grad_norm(),
            energy_grid: "interpolated".into(),
        }
    }

    /// Writes `config.json`, `correlogram.csv`, `corrmap.bin`, `density.bin`,
    /// `generators.csv`, `trace.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("config.json"), &json(&self.config))?;
        let mut buf = Vec::new();
        self.correlogram.write_csv(&mut buf).expect("in-memory write");
        write_file(&dir.join("correlogram.csv"), &buf)?;
        write_file(&dir.join("corrmap.bin"), &encode_field(&self.correlation))?;
        write_file(&dir.join("density.bin"), &encode_field(&self.density))?;
        let mut buf = Vec::new();
        self.result
            .generators
            .write_csv(&mut buf, self.density.grid().cell_size_km())
            .expect("in-memory write");
        write_file(&dir.join("generators.csv"), &buf)?;
        let mut buf = Vec::new();
        self.result.write_trace_csv(&mut buf).expect("in-memory write");
        write_file(&dir.join("trace.csv"), &buf)?;
        write_file(&dir.join("report.json"), &json(&self.summary()))
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub input_digest: String,
    pub seed: u64,
    pub grid: GridSummary,
    pub fine_grid: GridSummary,
    pub decorrelation_lag: usize,
    pub decorrelation_km: f64,
    pub decorrelated: bool,
    pub variogram: Option<VariogramFit>,
    pub missing_cells: usize,
    pub alpha: u32,
    pub alpha_overridden: bool,
    pub k_at_alpha: usize,
    pub over_threshold: bool,
    pub alpha_trace: Vec<(u32, usize)>,
    pub solver: SolverKind,
    pub status: Status,
    pub iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_grad_norm: f64,
    /// Grid on which energies are evaluated.
    pub energy_grid: String,
}

/// Runs the solver selected by `config` with its relocation seed replaced by `seed`.
pub fn solve(problem: &DiscreteProblem, init: &GeneratorSet, config: &PipelineConfig, seed: u64) -> Result<CvtResult> {
    match config.solver {
        SolverKind::Lloyd => Ok(lloyd_solve_with(problem, init, &LloydConfig { seed, ..config.lloyd })),
        SolverKind::Tn => tn_solve(problem, init, &TnConfig { seed, ..config.tn }),
    }
}

/// Correlogram, decorrelation lag, correlation map at that lag, refinement,
/// exponent selection, density and CVT solve, in that order.
pub fn gauge_optim(obs: &ObservationMatrix, config: &PipelineConfig) -> Result<PlacementReport> {
    config.validate()?;
    let grid = obs.grid();
    if config.k_g > grid.active_count() {
        return Err(Error::Config(format!(
            "k_g = {} exceeds the {} in-mask cells",
            config.k_g,
            grid.active_count()
        )));
    }
    let seeds = StageSeeds::new(config.seed);
    let limit = grid.nx().max(grid.ny());
    let max_lag = config.max_lag.unwrap_or((limit / 2).max(1)).min(limit);

    let curve = correlogram(
        obs,
        max_lag,
        config.mc_samples,
        config.annulus_halfwidth,
        seeds.correlogram,
    )
    .stage("correlogram")?;
    let variogram = fit_exponential_nugget(&curve).ok();
    let decorrelation = decorrelation_distance(&curve);

    let ring = RingSampling::new(
        decorrelation.lag as f64,
        config.mc_samples,
        config.annulus_halfwidth,
        seeds.map,
    )
    .stage("correlation-map")?;
    let map = effective_correlation_map(obs, &ring).stage("correlation-map")?;
    let missing_cells = map.field.missing_count();
    let correlation = interpolate_field(&map.field, config.interpolation_factor).stage("interpolation")?;

    let (alpha, density) = match config.alpha_override {
        Some(a) => {
            let density = build_density(&correlation, &config.density_params(a)).stage("density")?;
            let k_at_alpha = count_below_threshold(&correlation, a, config.c_tol).stage("alpha-selection")?;
            let alpha = AlphaSelection {
                alpha: a,
                k_at_alpha,
                trace: Vec::new(),
                over_threshold: false,
            };
            (alpha, density)
        }
        None => {
            let alpha =
                select_alpha(&correlation, config.c_tol, config.k_g, config.alpha_max).stage("alpha-selection")?;
            let density = build_density(&correlation, &config.density_params(alpha.alpha)).stage("density")?;
            (alpha, density)
        }
    };
    let alpha_overridden = config.alpha_override.is_some();

    let problem = DiscreteProblem::from_density(&density).stage("cvt-init")?;
    let init = initial_generators(&problem, config.k_g, config.init, seeds.init).stage("cvt-init")?;
    let result = solve(&problem, &init, config, seeds.solver).stage("cvt-solve")?;

    Ok(PlacementReport {
        config: config.clone(),
        input_digest: observation_digest(obs),
        grid: grid.summary(),
        correlogram: curve,
        variogram,
        decorrelation,
        decorrelation_km: decorrelation.lag as f64 * grid.cell_size_km(),
        correlation,
        missing_cells,
        alpha,
        alpha_overridden,
        density,
        initial_generators: init,
        result,
    })
}

/// Tessellation energy of an arbitrary site set against a density field.
pub fn energy_of_placement(density: &ScalarField, gens: &GeneratorSet) -> Result<f64> {
    Ok(energy(&DiscreteProblem::from_density(density)?, gens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub radii_km: Vec<f64>,
    /// Gauges whose nearest optimal site is within each radius.
    pub counts_within: Vec<usize>,
    pub counts_outside: Vec<usize>,
    pub per_gauge_nearest_km: Vec<f64>,
}

impl ComparisonReport {
    pub fn total(&self) -> usize {
        self.per_gauge_nearest_km.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "radius_km,within,outside")?;
        for ((r, a), b) in self.radii_km.iter().zip(&self.counts_within).zip(&self.counts_outside) {
            writeln!(w, "{r},{a},{b}")?;
        }
        Ok(())
    }

    pub fn write_per_gauge_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "gauge,nearest_km")?;
        for (i, d) in self.per_gauge_nearest_km.iter().enumerate() {
            writeln!(w, "{i},{d}")?;
        }
        Ok(())
    }
}

/// For every real gauge, the distance in km to the closest optimal site, and
/// how many gauges fall within each radius. Coordinates are grid units
/// scaled by `cell_size_km`.
pub fn compare_placements(
    real: &GeneratorSet,
    optimal: &GeneratorSet,
    radii_km: &[f64],
    cell_size_km: f64,
) -> Result<ComparisonReport> {
    if radii_km.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::Validation("radii must be positive".into()));
    }
    if radii_km.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("radii must be sorted ascending".into()));
    }
    if !(cell_size_km > 0.0 && cell_size_km.is_finite()) {
        return Err(Error::Validation(format!("cell size must be positive, got {cell_size_km}")));
    }
    let nearest: Vec<f64> = real
        .positions()
        .iter()
        .map(|p| {
            optimal
                .positions()
                .iter()
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]) * cell_size_km)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let counts_within: Vec<usize> = radii_km
        .iter()
        .map(|&r| nearest.iter().filter(|&&d| d <= r).count())
        .collect();
    Ok(ComparisonReport {
        radii_km: radii_km.to_vec(),
        counts_outside: counts_within.iter().map(|&c| nearest.len() - c).collect(),
        counts_within,
        per_gauge_nearest_km: nearest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointUnits {
    Km,
    Grid,
}

/// Point list from a CSV with either `x_km,y_km` or `x_grid,y_grid` columns
/// (`prefer` decides when both are present); other columns are ignored.
pub fn read_points_csv<R: Read>(r: R, prefer: PointUnits) -> Result<(Vec<Point>, PointUnits)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format("line 1", e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let km = col("x_km").zip(col("y_km"));
    let grid = col("x_grid").zip(col("y_grid"));
    let (ix, iy, units) = match (km, grid) {
        (Some((x, y)), Some(_)) if prefer == PointUnits::Km => (x, y, PointUnits::Km),
        (_, Some((x, y))) => (x, y, PointUnits::Grid),
        (Some((x, y)), None) => (x, y, PointUnits::Km),
        (None, None) => {
            return Err(Error::format(
                "line 1",
                "expected columns x_km,y_km or x_grid,y_grid",
            ))
        }
    };
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = format!("line {}", i + 2);
        let rec = rec.map_err(|e| Error::format(line.clone(), e.to_string()))?;
        let field = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(line.clone(), format!("not a finite number: {s:?}")))
        };
        points.push([field(ix)?, field(iy)?]);
    }
    if points.is_empty() {
        return Err(Error::format("line 2", "no points"));
    }
    Ok((points, units))
}
