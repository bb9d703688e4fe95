use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gauge_cvt::correlation::{
    correlogram, decorrelation_distance, effective_correlation_map, interpolate_field, RingSampling,
};
use gauge_cvt::cvt::{initial_generators, DiscreteProblem, GeneratorSet};
use gauge_cvt::density::{build_density, count_below_threshold, select_alpha, AlphaSelection, DensityParams};
use gauge_cvt::grf::{generate_grf, FieldSpecConfig};
use gauge_cvt::io::{load_field, load_observations, save_field, save_observations, Format};
use gauge_cvt::placement::{
    compare_placements, gauge_optim, read_points_csv, solve, PipelineConfig, PointUnits, SolverKind,
};
use gauge_cvt::render::render_svg;
use gauge_cvt::variogram::fit_exponential_nugget;
use gauge_cvt::{Error, Result};

#[derive(Parser)]
#[command(name = "gauge-cvt", version, about = "Correlation-driven gauge placement on gridded data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize observations from a Gaussian random field.
    GenGrf(GenGrfArgs),
    /// Monte Carlo effective-correlation map at one separation.
    CorrMap(CorrMapArgs),
    /// Domain-mean correlation versus separation, and the 1/e distance.
    Correlogram(CorrelogramArgs),
    /// Density field from a correlation map.
    Density(DensityArgs),
    /// CVT generators for a density field.
    Optimize(OptimizeArgs),
    /// Full placement pipeline from observations to generators.
    Pipeline(PipelineArgs),
    /// Distances from existing gauges to optimized sites.
    Compare(CompareArgs),
    /// SVG drawing of a pipeline or optimize output directory.
    Render(RenderArgs),
}

#[derive(Args)]
struct Common {
    /// Seed for every randomized step.
    #[arg(long)]
    seed: Option<u64>,
    /// Physical size of one input grid cell.
    #[arg(long, default_value_t = 1.0)]
    cell_size_km: f64,
}

#[derive(Args)]
struct GenGrfArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with nx, ny, cell_size_km, n_time, c0, d0, s0, seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    n_time: Option<usize>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    d0: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cell_size_km: Option<f64>,
}

#[derive(Args)]
struct CorrMapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Separation in grid units.
    #[arg(long)]
    d: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    halfwidth: f64,
    /// Refinement factor applied after filling missing cells.
    #[arg(long, default_value_t = 1)]
    interp_factor: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CorrelogramArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest separation; defaults to half the longer grid side.
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    halfwidth: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DensityArgs {
    /// Correlation map.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    c_tol: f64,
    /// Target gauge count for the exponent selection.
    #[arg(long)]
    k_g: Option<usize>,
    /// Fixed exponent instead of selecting one from --k-g.
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long, default_value_t = 1e-6)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    big_r: f64,
    /// Optional CSV of the examined (alpha, k) pairs.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Lloyd,
    Tn,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Lloyd => SolverKind::Lloyd,
            SolverArg::Tn => SolverKind::Tn,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Density field.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for generators.csv and trace.csv.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline JSON config; only the solver settings are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_g: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_g: Option<usize>,
    #[arg(long)]
    c_tol: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    interp_factor: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    /// Existing gauges, CSV with x_km,y_km or x_grid,y_grid.
    #[arg(long)]
    real: PathBuf,
    /// Optimized sites, e.g. generators.csv from a pipeline run.
    #[arg(long)]
    optimal: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    radii: Vec<f64>,
    /// Radius table; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-gauge nearest-distance table.
    #[arg(long)]
    per_gauge: Option<PathBuf>,
    /// Cell size used to convert grid-unit coordinates to km.
    #[arg(long, default_value_t = 1.0)]
    cell_size_km: f64,
}

#[derive(Args)]
struct RenderArgs {
    /// Directory containing generators.csv and density.bin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Second point set drawn with a distinct marker.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Fine-grid cell size for km overlay coordinates when the directory has no report.json.
    #[arg(long)]
    cell_size_km: Option<f64>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn echo<T: Serialize>(label: &str, value: &T) {
    eprintln!(
        "{label}: {}",
        serde_json::to_string(value).expect("plain data serializes")
    );
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("in-memory write");
    buf
}

fn gen_grf(a: GenGrfArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<FieldSpecConfig>(p)?,
        None => gauge_cvt::benchmark::benchmark_field_config(0),
    };
    if a.config.is_none() {
        cfg.cell_size_km = 1.0;
    }
    cfg.nx = a.nx.unwrap_or(cfg.nx);
    cfg.ny = a.ny.unwrap_or(cfg.ny);
    cfg.n_time = a.n_time.unwrap_or(cfg.n_time);
    cfg.c0 = a.c0.unwrap_or(cfg.c0);
    cfg.d0 = a.d0.unwrap_or(cfg.d0);
    cfg.s0 = a.s0.unwrap_or(cfg.s0);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.cell_size_km = a.cell_size_km.unwrap_or(cfg.cell_size_km);
    echo("config", &cfg);
    let spec = cfg.to_spec().map_err(|e| Error::Config(e.to_string()))?;
    let obs = generate_grf(&spec).map_err(|e| e.in_stage("gen-grf"))?;
    save_observations(&obs, &a.out, Format::from_path(&a.out))?;
    eprintln!("wrote {} cells x {} steps to {}", obs.n_cells(), obs.n_time(), a.out.display());
    Ok(())
}

fn load_obs(path: &Path, cell_size_km: f64) -> Result<gauge_cvt::grid::ObservationMatrix> {
    load_observations(path, Format::from_path(path), cell_size_km).map_err(|e| e.in_stage("load-input"))
}

fn corr_map(a: CorrMapArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let params = RingSampling::new(a.d, a.samples, a.halfwidth, seed).map_err(|e| Error::Config(e.to_string()))?;
    echo("config", &params);
    let obs = load_obs(&a.input, a.common.cell_size_km)?;
    let map = effective_correlation_map(&obs, &params).map_err(|e| e.in_stage("correlation-map"))?;
    eprintln!(
        "{} of {} cells without a value, filled from nearest neighbors",
        map.field.missing_count(),
        obs.n_cells()
    );
    let field = interpolate_field(&map.field, a.interp_factor).map_err(|e| e.in_stage("interpolation"))?;
    save_field(&field, &a.out, Format::from_path(&a.out))
}

fn correlogram_cmd(a: CorrelogramArgs) -> Result<()> {
    let obs = load_obs(&a.input, a.common.cell_size_km)?;
    let grid = obs.grid();
    let max_lag = a.max_lag.unwrap_or((grid.nx().max(grid.ny()) / 2).max(1));
    let seed = a.common.seed.unwrap_or(0);
    echo(
        "config",
        &serde_json::json!({"max_lag": max_lag, "samples": a.samples, "halfwidth": a.halfwidth, "seed": seed}),
    );
    let curve = correlogram(&obs, max_lag, a.samples, a.halfwidth, seed).map_err(|e| e.in_stage("correlogram"))?;
    write_bytes(&a.out, &csv_bytes(|w| curve.write_csv(w)))?;
    let d = decorrelation_distance(&curve);
    if d.decorrelated {
        eprintln!(
            "decorrelation distance: {} grid units ({} km)",
            d.lag,
            d.lag as f64 * grid.cell_size_km()
        );
    } else {
        eprintln!("correlation stays above 1/e up to lag {}", d.lag);
    }
    match fit_exponential_nugget(&curve) {
        Ok(fit) => eprintln!(
            "fit: c0 = {:.4}, d0 = {:.4}, s0 = {:.4}, rmse = {:.3e}",
            fit.model.c0, fit.model.d0, fit.model.s0, fit.rmse
        ),
        Err(e) => eprintln!("fit skipped: {e}"),
    }
    Ok(())
}

fn density_cmd(a: DensityArgs) -> Result<()> {
    if a.k_g.is_none() && a.alpha.is_none() {
        return Err(Error::Config("density needs --k-g or --alpha".into()));
    }
    echo(
        "config",
        &serde_json::json!({"c_tol": a.c_tol, "k_g": a.k_g, "alpha": a.alpha, "r": a.r, "big_r": a.big_r}),
    );
    let corr = load_field(&a.input, Format::from_path(&a.input), a.common.cell_size_km)
        .map_err(|e| e.in_stage("load-input"))?;
    let selection = match (a.alpha, a.k_g) {
        (Some(alpha), _) => AlphaSelection {
            alpha,
            k_at_alpha: count_below_threshold(&corr, alpha, a.c_tol).map_err(|e| e.in_stage("alpha-selection"))?,
            trace: Vec::new(),
            over_threshold: false,
        },
        (None, Some(k_g)) => select_alpha(&corr, a.c_tol, k_g, gauge_cvt::density::DEFAULT_ALPHA_MAX)
            .map_err(|e| e.in_stage("alpha-selection"))?,
        (None, None) => unreachable!(),
    };
    if selection.over_threshold {
        eprintln!(
            "warning: {} cells fall below c_tol already at alpha = 1",
            selection.k_at_alpha
        );
    }
    eprintln!("alpha = {} ({} cells below c_tol)", selection.alpha, selection.k_at_alpha);
    let params = DensityParams {
        r: a.r,
        big_r: a.big_r,
        alpha: selection.alpha,
    };
    let rho = build_density(&corr, &params).map_err(|e| e.in_stage("density"))?;
    save_field(&rho, &a.out, Format::from_path(&a.out))?;
    if let Some(path) = &a.trace {
        write_bytes(path, &csv_bytes(|w| selection.write_csv(w)))?;
    }
    Ok(())
}

fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let mut cfg = load_pipeline_config(a.config.as_deref())?;
    if let Some(k) = a.k_g {
        cfg.k_g = k;
    }
    if let Some(s) = a.solver {
        cfg.solver = s.into();
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    echo("config", &cfg);
    let rho = load_field(&a.input, Format::from_path(&a.input), a.common.cell_size_km)
        .map_err(|e| e.in_stage("load-input"))?;
    let problem = DiscreteProblem::from_density(&rho).map_err(|e| e.in_stage("cvt-init"))?;
    let init = initial_generators(&problem, cfg.k_g, cfg.init, cfg.seed).map_err(|e| e.in_stage("cvt-init"))?;
    let result = solve(&problem, &init, &cfg, cfg.seed).map_err(|e| e.in_stage("cvt-solve"))?;
    create_dir(&a.out)?;
    let gens = csv_bytes(|w| result.generators.write_csv(w, rho.grid().cell_size_km()));
    write_bytes(&a.out.join("generators.csv"), &gens)?;
    write_bytes(&a.out.join("trace.csv"), &csv_bytes(|w| result.write_trace_csv(w)))?;
    eprintln!(
        "{:?} after {} iterations, energy {} -> {}",
        result.status,
        result.iterations(),
        result.initial_energy(),
        result.final_energy()
    );
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = load_pipeline_config(a.config.as_deref())?;
    if let Some(v) = a.k_g {
        cfg.k_g = v;
    }
    if let Some(v) = a.c_tol {
        cfg.c_tol = v;
    }
    if let Some(v) = a.samples {
        cfg.mc_samples = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha_override = Some(v);
    }
    if let Some(v) = a.solver {
        cfg.solver = v.into();
    }
    if let Some(v) = a.interp_factor {
        cfg.interpolation_factor = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    echo("config", &cfg);
    let obs = load_obs(&a.input, a.common.cell_size_km)?;
    let report = gauge_optim(&obs, &cfg)?;
    report.write_dir(&a.out)?;
    let s = report.summary();
    eprintln!(
        "decorrelation distance {} ({} km), alpha {}, {:?} after {} iterations, energy {} -> {}",
        s.decorrelation_lag, s.decorrelation_km, s.alpha, s.status, s.iterations, s.initial_energy, s.final_energy
    );
    if s.over_threshold {
        eprintln!("warning: {} cells fall below c_tol already at alpha = 1", s.k_at_alpha);
    }
    Ok(())
}

fn points_km(path: &Path, cell_size_km: f64) -> Result<GeneratorSet> {
    let bytes = read_bytes(path)?;
    let (pts, units) = read_points_csv(bytes.as_slice(), PointUnits::Km)?;
    let scale = match units {
        PointUnits::Km => 1.0,
        PointUnits::Grid => cell_size_km,
    };
    GeneratorSet::new(pts.into_iter().map(|p| [p[0] * scale, p[1] * scale]).collect())
}

fn compare(a: CompareArgs) -> Result<()> {
    echo(
        "config",
        &serde_json::json!({"radii_km": a.radii, "cell_size_km": a.cell_size_km}),
    );
    let real = points_km(&a.real, a.cell_size_km)?;
    let optimal = points_km(&a.optimal, a.cell_size_km)?;
    let report = compare_placements(&real, &optimal, &a.radii, 1.0).map_err(|e| e.in_stage("compare"))?;
    let table = csv_bytes(|w| report.write_csv(w));
    match &a.out {
        Some(p) => write_bytes(p, &table)?,
        None => print!("{}", String::from_utf8(table).expect("ascii")),
    }
    if let Some(p) = &a.per_gauge {
        write_bytes(p, &csv_bytes(|w| report.write_per_gauge_csv(w)))?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let density = load_field(&a.input.join("density.bin"), Format::Binary, 1.0)?;
    let bytes = read_bytes(&a.input.join("generators.csv"))?;
    let (pts, units) = read_points_csv(bytes.as_slice(), PointUnits::Grid)?;
    if units != PointUnits::Grid {
        return Err(Error::format("generators.csv", "expected x_grid,y_grid columns"));
    }
    let gens = GeneratorSet::new(pts)?;
    let overlay = match &a.overlay {
        Some(path) => {
            let (pts, units) = read_points_csv(read_bytes(path)?.as_slice(), PointUnits::Grid)?;
            let scale = match units {
                PointUnits::Grid => 1.0,
                PointUnits::Km => {
                    let cell = match a.cell_size_km {
                        Some(c) => c,
                        None => fine_cell_size(&a.input)?,
                    };
                    1.0 / cell
                }
            };
            Some(pts.into_iter().map(|p| [p[0] * scale, p[1] * scale]).collect::<Vec<_>>())
        }
        None => None,
    };
    write_bytes(&a.out, render_svg(&density, &gens, overlay.as_deref()).as_bytes())
}

fn fine_cell_size(dir: &Path) -> Result<f64> {
    let path = dir.join("report.json");
    let v: serde_json::Value = read_json(&path)?;
    v["fine_grid"]["cell_size_km"]
        .as_f64()
        .ok_or_else(|| Error::Config(format!("{}: missing fine_grid.cell_size_km", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match cli.command {
        Command::GenGrf(a) => ("gen-grf", gen_grf(a)),
        Command::CorrMap(a) => ("corr-map", corr_map(a)),
        Command::Correlogram(a) => ("correlogram", correlogram_cmd(a)),
        Command::Density(a) => ("density", density_cmd(a)),
        Command::Optimize(a) => ("optimize", optimize(a)),
        Command::Pipeline(a) => ("pipeline", pipeline(a)),
        Command::Compare(a) => ("compare", compare(a)),
        Command::Render(a) => ("render", render(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                Error::Stage { .. } => e,
                other => other.in_stage(name),
            };
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
