//! Regression of fluctuation width on size.

use serde::{Deserialize, Serialize};

use super::optim::linear_fit;
use crate::error::{Error, Result};

pub const MIN_BIN_SAMPLES: usize = 30;
pub const MIN_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_size: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeVarianceResult {
    /// Exponent of `std ~ size^-beta`.
    pub beta_hat: f64,
    pub beta_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub bins: Vec<SizeBin>,
}

/// Bins `(size, deviation)` pairs into `n_bins` log-spaced size bins and
/// regresses the log of the per-bin standard deviation on the log of the
/// mean bin size.
pub fn size_variance_regression(pairs: &[(f64, f64)], n_bins: usize) -> Result<SizeVarianceResult> {
    if n_bins < MIN_BINS {
        return Err(Error::param("n_bins", format!("need at least {MIN_BINS} bins")));
    }
    if let Some((y, _)) = pairs.iter().find(|(y, d)| !(*y > 0.0) || !y.is_finite() || !d.is_finite()) {
        return Err(Error::domain("size_variance_regression", format!("invalid size {y}")));
    }
    let (lo, hi) = pairs
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (y, _)| (lo.min(*y), hi.max(*y)));
    if !(hi > lo) {
        return Err(Error::Degenerate("all sizes are equal".into()));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let width = (lhi - llo) / n_bins as f64;
    let mut acc = vec![(0usize, 0.0f64, 0.0f64, 0.0f64); n_bins];
    for &(y, d) in pairs {
        let k = (((y.ln() - llo) / width) as usize).min(n_bins - 1);
        let e = &mut acc[k];
        e.0 += 1;
        e.1 += y;
        e.2 += d;
        e.3 += d * d;
    }
    let thin: Vec<String> = acc
        .iter()
        .enumerate()
        .filter(|(_, e)| e.0 < MIN_BIN_SAMPLES)
        .map(|(k, e)| format!("bin {k} ({} samples)", e.0))
        .collect();
    if !thin.is_empty() {
        return Err(Error::InsufficientData(format!(
            "size bins below {MIN_BIN_SAMPLES} samples: {}",
            thin.join(", ")
        )));
    }
    let bins: Vec<SizeBin> = acc
        .iter()
        .enumerate()
        .map(|(k, &(c, sy, sd, sdd))| {
            let n = c as f64;
            let mean = sd / n;
            SizeBin {
                lower: (llo + k as f64 * width).exp(),
                upper: (llo + (k + 1) as f64 * width).exp(),
                mean_size: sy / n,
                std: (sdd / n - mean * mean).max(0.0).sqrt(),
                count: c,
            }
        })
        .collect();
    if bins.iter().any(|b| !(b.std > 0.0)) {
        return Err(Error::Degenerate("a size bin has zero spread".into()));
    }
    let xs: Vec<f64> = bins.iter().map(|b| b.mean_size.ln()).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.std.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(SizeVarianceResult {
        beta_hat: -fit.slope,
        beta_stderr: fit.slope_stderr,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        bins,
    })
}
