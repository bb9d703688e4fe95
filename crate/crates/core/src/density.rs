//! Power-law density built from an effective-correlation field, and the
//! choice of its exponent from a target gauge count.
//!
//! With `c_min`/`c_max` the field's in-mask extrema,
//!
//! ```text
//! rho(x) = r + R * ((c_max - corr(x)) / (c_max - c_min))^alpha
//! ```
//!
//! so weakly correlated cells get the largest weight `r + R`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Smallest correlation range for which relative correlation is defined.
pub const MIN_CORR_RANGE: f64 = 1e-9;
pub const DEFAULT_ALPHA_MAX: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Floor weight.
    pub r: f64,
    /// Weight added at the least correlated cell.
    pub big_r: f64,
    pub alpha: u32,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            r: 1e-6,
            big_r: 1.0,
            alpha: 1,
        }
    }
}

impl DensityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Validation(format!("r must be positive, got {}", self.r)));
        }
        if !(self.big_r > 0.0 && self.big_r.is_finite()) {
            return Err(Error::Validation(format!("R must be positive, got {}", self.big_r)));
        }
        if self.alpha < 1 {
            return Err(Error::Validation("alpha must be >= 1".into()));
        }
        Ok(())
    }
}

/// In-mask extrema of a correlation field; errors if they (nearly) coincide.
pub fn correlation_range(corr: &ScalarField) -> Result<(f64, f64)> {
    let (lo, hi) = corr.extrema();
    if hi - lo <= MIN_CORR_RANGE {
        return Err(Error::DegenerateField(format!(
            "correlation field is constant ({lo} .. {hi})"
        )));
    }
    Ok((lo, hi))
}

fn check_correlation_values(corr: &ScalarField) -> Result<()> {
    if corr.values().iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Validation("correlation values must lie in [-1, 1]".into()));
    }
    Ok(())
}

pub fn build_density(corr: &ScalarField, params: &DensityParams) -> Result<ScalarField> {
    params.validate()?;
    check_correlation_values(corr)?;
    let (c_min, c_max) = correlation_range(corr)?;
    let span = c_max - c_min;
    let values = corr
        .values()
        .iter()
        .map(|&c| params.r + params.big_r * ((c_max - c) / span).powi(params.alpha as i32))
        .collect();
    ScalarField::new(corr.grid().clone(), values)
}

/// Number of cells whose relative correlation raised to `alpha` is below `c_tol`.
///
/// The test is done in log space (`alpha * ln(rel) < ln(c_tol)`), which keeps
/// the count exactly nondecreasing in `alpha` under rounding.
pub fn count_below_threshold(corr: &ScalarField, alpha: u32, c_tol: f64) -> Result<usize> {
    if !(c_tol > 0.0 && c_tol < 1.0) {
        return Err(Error::Validation(format!("c_tol must be in (0, 1), got {c_tol}")));
    }
    if alpha < 1 {
        return Err(Error::Validation("alpha must be >= 1".into()));
    }
    let (c_min, c_max) = correlation_range(corr)?;
    let span = c_max - c_min;
    let log_tol = c_tol.ln();
    let a = alpha as f64;
    Ok(corr
        .values()
        .iter()
        .filter(|&&c| {
            let rel = ((c - c_min) / span).clamp(0.0, 1.0);
            a * rel.ln() < log_tol
        })
        .count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub alpha: u32,
    pub k_at_alpha: usize,
    /// Every `(alpha, k)` pair examined, in increasing alpha.
    pub trace: Vec<(u32, usize)>,
    /// Set when even `alpha = 1` selects more than `k_g` cells.
    pub over_threshold: bool,
}

impl AlphaSelection {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,k")?;
        for (a, k) in &self.trace {
            writeln!(w, "{a},{k}")?;
        }
        Ok(())
    }
}

/// Largest integer `alpha` in `1..=alpha_max` with at most `k_g` cells below
/// `c_tol`. Because the count grows with `alpha`, the scan stops at the first
/// `alpha` that overshoots.
pub fn select_alpha(corr: &ScalarField, c_tol: f64, k_g: usize, alpha_max: u32) -> Result<AlphaSelection> {
    if k_g < 1 {
        return Err(Error::Validation("k_g must be >= 1".into()));
    }
    if alpha_max < 1 {
        return Err(Error::Validation("alpha_max must be >= 1".into()));
    }
    let mut trace = Vec::new();
    let mut chosen: Option<(u32, usize)> = None;
    for alpha in 1..=alpha_max {
        let k = count_below_threshold(corr, alpha, c_tol)?;
        trace.push((alpha, k));
        if k > k_g {
            break;
        }
        chosen = Some((alpha, k));
    }
    Ok(match chosen {
        Some((alpha, k_at_alpha)) => AlphaSelection {
            alpha,
            k_at_alpha,
            trace,
            over_threshold: false,
        },
        None => AlphaSelection {
            alpha: 1,
            k_at_alpha: trace[0].1,
            trace,
            over_threshold: true,
        },
    })
}
