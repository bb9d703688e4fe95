//! Exponential correlogram with nugget, `c0 * exp(-(d / d0)^s0)`, and its
//! weighted least-squares fit to an empirical correlogram.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::correlation::Correlogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialNugget {
    /// Correlation extrapolated to near-zero separation, in (0, 1].
    pub c0: f64,
    /// Scale (decorrelation distance) in grid units.
    pub d0: f64,
    /// Shape exponent in (0, 2].
    pub s0: f64,
}

impl ExponentialNugget {
    pub fn new(c0: f64, d0: f64, s0: f64) -> Result<Self> {
        let m = ExponentialNugget { c0, d0, s0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(Error::Validation(format!("c0 must be in (0, 1], got {}", self.c0)));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Validation(format!("d0 must be positive, got {}", self.d0)));
        }
        if !(self.s0 > 0.0 && self.s0 <= 2.0) {
            return Err(Error::Validation(format!("s0 must be in (0, 2], got {}", self.s0)));
        }
        Ok(())
    }

    /// Correlation at separation `d > 0`. The model is discontinuous at the
    /// origin (value 1 at `d = 0`), which callers handle themselves.
    pub fn eval(&self, d: f64) -> f64 {
        self.c0 * (-(d / self.d0).powf(self.s0)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub model: ExponentialNugget,
    pub rmse: f64,
}

const C0_BOUNDS: (f64, f64) = (1e-6, 1.0);
const S0_BOUNDS: (f64, f64) = (1e-3, 2.0);
const MAX_LM_ITERS: usize = 500;

struct Objective<'a> {
    lags: Vec<f64>,
    target: &'a [f64],
    weights: Vec<f64>,
}

impl Objective<'_> {
    fn sse(&self, p: [f64; 3]) -> f64 {
        let m = ExponentialNugget {
            c0: p[0],
            d0: p[1],
            s0: p[2],
        };
        self.lags
            .iter()
            .zip(self.target)
            .zip(&self.weights)
            .map(|((&d, &y), &w)| {
                let r = m.eval(d) - y;
                w * r * r
            })
            .sum()
    }
}

impl Objective<'_> {
    /// Residuals and their Jacobian with respect to `(c0, d0, s0)`.
    fn linearize(&self, p: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let [c0, d0, s0] = p;
        let mut r = Vec::with_capacity(self.lags.len());
        let mut jac = Vec::with_capacity(self.lags.len());
        for ((&d, &y), &w) in self.lags.iter().zip(self.target).zip(&self.weights) {
            let sw = w.sqrt();
            let u = (d / d0).powf(s0);
            let e = (-u).exp();
            r.push(sw * (c0 * e - y));
            jac.push([
                sw * e,
                sw * c0 * e * u * s0 / d0,
                -sw * c0 * e * u * (d / d0).ln(),
            ]);
        }
        (r, jac)
    }
}

/// Levenberg-Marquardt from `p`, clamping every trial point into `bounds`.
fn refine(obj: &Objective, mut p: [f64; 3], bounds: [(f64, f64); 3]) -> [f64; 3] {
    let mut f = obj.sse(p);
    let mut lambda = 1e-3;
    for _ in 0..MAX_LM_ITERS {
        let (r, jac) = obj.linearize(p);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (ri, row) in r.iter().zip(&jac) {
            let j = Vector3::from(*row);
            jtj += j * j.transpose();
            jtr += j * *ri;
        }
        if jtr.amax() <= 1e-15 * (1.0 + f) {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = p;
            for i in 0..3 {
                q[i] = (p[i] + step[i]).clamp(bounds[i].0, bounds[i].1);
            }
            let fq = obj.sse(q);
            if fq < f {
                let small = (0..3).all(|i| (q[i] - p[i]).abs() <= 1e-12 * p[i].abs().max(1e-12));
                p = q;
                let gain = f - fq;
                f = fq;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !small && gain > 1e-18 * f.max(f64::MIN_POSITIVE);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p
}

/// Fits `(c0, d0, s0)` by weighted least squares, weights = sample counts.
///
/// A coarse grid search seeds a Levenberg-Marquardt refinement.
pub fn fit_exponential_nugget(c: &Correlogram) -> Result<VariogramFit> {
    if c.lags.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 lags, got {}",
            c.lags.len()
        )));
    }
    let (lo, hi) = c
        .mean_corr
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 {
        return Err(Error::DegenerateFit(format!(
            "correlogram is constant at {lo}"
        )));
    }
    let total: f64 = c.sample_counts.iter().map(|&n| n as f64).sum();
    let obj = Objective {
        lags: c.lags.iter().map(|&l| l as f64).collect(),
        target: &c.mean_corr,
        weights: c.sample_counts.iter().map(|&n| n as f64 / total).collect(),
    };
    let max_lag = *c.lags.last().unwrap() as f64;
    let d0_bounds = (1e-3, 100.0 * max_lag.max(1.0));

    let mut best = ([1.0, 1.0, 1.0], f64::INFINITY);
    for ci in 0..=10 {
        let c0 = 0.5 + 0.05 * ci as f64;
        for di in 0..32 {
            let d0 = if max_lag > 1.0 {
                max_lag.powf(di as f64 / 31.0)
            } else {
                1.0
            };
            for si in 1..=8 {
                let s0 = 0.25 * si as f64;
                let p = [c0, d0, s0];
                let v = obj.sse(p);
                if v < best.1 {
                    best = (p, v);
                }
            }
        }
    }

    let bounds = [C0_BOUNDS, d0_bounds, S0_BOUNDS];
    let p = refine(&obj, best.0, bounds);

    let model = ExponentialNugget {
        c0: p[0],
        d0: p[1],
        s0: p[2],
    };
    let rmse = obj.sse(p).sqrt();
    Ok(VariogramFit { model, rmse })
}
