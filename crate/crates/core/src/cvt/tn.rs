//! Truncated-Newton minimization of the discrete tessellation energy.
//!
//! Each outer iteration solves `H p = -g` approximately with linear conjugate
//! gradients started from `p = 0`, where Hessian-vector products are forward
//! differences of the gradient. The inner solve is preconditioned with the
//! fixed-assignment Hessian `2 m_i I`, so with a settled partition the first
//! inner step is exactly a Lloyd step. The step length comes from Armijo
//! backtracking; the direction falls back to `-g` when it is not a descent
//! direction or when backtracking along it fails.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, is_fixed_point, relocate_empty, CvtResult, DiscreteProblem, Evaluation, GeneratorSet, Status, TraceEntry};
use crate::error::{Error, Result};

/// Relative energy change below which an iteration counts as stagnant.
const STAGNATION_RTOL: f64 = 1e-12;
const STAGNATION_ITERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoConfig {
    pub c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
        }
    }
}

/// Finite-difference step for Hessian-vector products `(g(x + h v) - g(x)) / h`.
///
/// With fixed assignments the energy is quadratic with Hessian `2 m_i I`, so
/// an infinitesimal step only recovers that block diagonal, plus a jump of
/// order `1/h` whenever a site happens to cross a bisector. A displacement
/// that is a fraction of the site spacing averages over those crossings and
/// picks up the coupling between neighboring generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdStep {
    /// `h = sqrt(eps) * (1 + |x|) / |v|`.
    Relative,
    /// `h` chosen so that the largest generator displacement equals the
    /// given length in site-spacing units.
    Displacement(f64),
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep::Displacement(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TnConfig {
    pub max_outer: usize,
    /// Stop once `max|g| < grad_tol * (1 + |E|)`.
    pub grad_tol: f64,
    pub cg_max: usize,
    pub cg_rtol: f64,
    pub armijo: ArmijoConfig,
    pub fd_step: FdStep,
    /// Precondition the inner solve with the fixed-assignment block diagonal `2 m_i`.
    pub precondition: bool,
    /// Seed for relocating empty generators.
    pub seed: u64,
}

impl Default for TnConfig {
    fn default() -> Self {
        TnConfig {
            max_outer: 200,
            grad_tol: 1e-8,
            cg_max: 30,
            cg_rtol: 1e-2,
            armijo: ArmijoConfig::default(),
            fd_step: FdStep::default(),
            precondition: true,
            seed: 0,
        }
    }
}

impl TnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.max_outer == 0 || self.cg_max == 0 || self.armijo.max_backtracks == 0 {
            return Err(Error::Config("TN iteration limits must be positive".into()));
        }
        if !positive(self.grad_tol) || !positive(self.cg_rtol) {
            return Err(Error::Config("TN tolerances must be positive".into()));
        }
        if !(self.armijo.c > 0.0 && self.armijo.c < 1.0) {
            return Err(Error::Config(format!("Armijo c must be in (0, 1), got {}", self.armijo.c)));
        }
        if !(self.armijo.backtrack > 0.0 && self.armijo.backtrack < 1.0) {
            return Err(Error::Config(format!(
                "Armijo backtrack must be in (0, 1), got {}",
                self.armijo.backtrack
            )));
        }
        if let FdStep::Displacement(d) = self.fd_step {
            if !positive(d) {
                return Err(Error::Config(format!("finite-difference displacement must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], t: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + t * b).collect()
}

struct Newton<'a> {
    problem: &'a DiscreteProblem,
    config: &'a TnConfig,
}

impl Newton<'_> {
    fn hessian_times(&self, x: &[f64], g: &[f64], v: &[f64]) -> Vec<f64> {
        let h = match self.config.fd_step {
            FdStep::Relative => f64::EPSILON.sqrt() * (1.0 + norm(x)) / norm(v),
            FdStep::Displacement(d) => d / v.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        };
        let shifted = evaluate(self.problem, &GeneratorSet::from_flat(&axpy(x, h, v)));
        shifted
            .flat_gradient()
            .iter()
            .zip(g)
            .map(|(a, b)| (a - b) / h)
            .collect()
    }

    /// Approximate solution of `H p = -g`; `inv_diag` is the preconditioner.
    fn direction(&self, x: &[f64], g: &[f64], inv_diag: &[f64]) -> Vec<f64> {
        let n = g.len();
        let precond = |r: &[f64]| -> Vec<f64> { r.iter().zip(inv_diag).map(|(a, b)| a * b).collect() };
        let mut p = vec![0.0; n];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut z = precond(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let target = self.config.cg_rtol * norm(&r);
        for j in 0..self.config.cg_max {
            let hd = self.hessian_times(x, g, &d);
            let curv = dot(&d, &hd);
            if !(curv > 0.0) {
                // z is still the preconditioned -g on the first pass
                return if j == 0 { z } else { p };
            }
            let alpha = rz / curv;
            for i in 0..n {
                p[i] += alpha * d[i];
                r[i] -= alpha * hd[i];
            }
            if norm(&r) <= target {
                break;
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
            rz = rz_new;
        }
        p
    }
}

/// Backtracking from the full step until sufficient decrease holds.
fn armijo(
    problem: &DiscreteProblem,
    config: &ArmijoConfig,
    x: &[f64],
    energy: f64,
    p: &[f64],
    slope: f64,
) -> Option<(GeneratorSet, Evaluation)> {
    let mut t = 1.0;
    for _ in 0..config.max_backtracks {
        let candidate = GeneratorSet::from_flat(&axpy(x, t, p));
        let ce = evaluate(problem, &candidate);
        if ce.energy <= energy + config.c * t * slope {
            return Some((candidate, ce));
        }
        t *= config.backtrack;
    }
    None
}

pub fn tn_solve(problem: &DiscreteProblem, init: &GeneratorSet, config: &TnConfig) -> Result<CvtResult> {
    config.validate()?;
    let newton = Newton { problem, config };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gens = init.clone();
    let mut e: Evaluation = evaluate(problem, &gens);
    let mut trace = vec![TraceEntry {
        iter: 0,
        energy: e.energy,
        grad_norm: e.grad_max_norm(),
    }];
    let diagonal = problem.diagonal();
    let mut stagnant = 0;
    let mut status = Status::MaxIterations;

    for iter in 1..=config.max_outer + 1 {
        if e.has_empty() {
            relocate_empty(problem, &mut gens, &e.empty(), &mut rng);
            e = evaluate(problem, &gens);
            trace.last_mut().expect("trace starts nonempty").energy = e.energy;
            trace.last_mut().expect("trace starts nonempty").grad_norm = e.grad_max_norm();
        }
        if !e.has_empty() && e.grad_max_norm() < config.grad_tol * (1.0 + e.energy.abs()) {
            status = Status::Converged;
            break;
        }
        if stagnant >= STAGNATION_ITERS {
            status = if !e.has_empty() && is_fixed_point(problem, &gens, diagonal) {
                Status::Converged
            } else {
                Status::Stalled
            };
            break;
        }
        if iter > config.max_outer {
            break;
        }

        let x = gens.to_flat();
        let g = e.flat_gradient();
        let descent: Vec<f64> = g.iter().map(|v| -v).collect();
        let inv_diag: Vec<f64> = e
            .mass
            .iter()
            .flat_map(|&m| {
                let v = if config.precondition && m > 0.0 { 0.5 / m } else { 1.0 };
                [v, v]
            })
            .collect();
        let p = newton.direction(&x, &g, &inv_diag);
        let slope = dot(&g, &p);
        let mut accepted = None;
        if slope < 0.0 {
            accepted = armijo(problem, &config.armijo, &x, e.energy, &p, slope);
        }
        if accepted.is_none() {
            accepted = armijo(problem, &config.armijo, &x, e.energy, &descent, -dot(&g, &g));
        }
        let Some((next, ne)) = accepted else {
            status = Status::Stalled;
            break;
        };

        let change = (e.energy - ne.energy).abs() / e.energy.abs().max(f64::MIN_POSITIVE);
        if change < STAGNATION_RTOL {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        gens = next;
        e = ne;
        trace.push(TraceEntry {
            iter,
            energy: e.energy,
            grad_norm: e.grad_max_norm(),
        });
    }

    Ok(CvtResult {
        generators: gens,
        energy_trace: trace,
        status,
    })
}
