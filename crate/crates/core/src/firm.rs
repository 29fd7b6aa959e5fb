//! Firm-level growth: sales aggregation, cash cows, preferential attachment
//! and the multiplicative firm-size process with its Pareto tail.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{FirmState, ProductId, ProductState};
use crate::rng::{stream_rng, SimRng};
use crate::stats::ks::two_sample_ks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentMode {
    /// Firms own products and attach new ones as random events.
    #[default]
    EventBased,
    /// Firm size follows the reduced stochastic equation directly.
    SdeReduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentConfig {
    /// Attachment rate per unit time.
    pub rate: f64,
    /// Fraction of firm sales given to a newly attached product.
    pub new_product_size_frac: f64,
    /// Multiplicative noise amplitude.
    pub noise_amplitude: f64,
    #[serde(default)]
    pub mode: AttachmentMode,
}

impl AttachmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::param("attachment.rate", "must be finite and >= 0"));
        }
        if !(self.new_product_size_frac > 0.0 && self.new_product_size_frac < 1.0) {
            return Err(Error::param("attachment.new_product_size_frac", "must lie in (0, 1)"));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::param("attachment.noise_amplitude", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Sum of the sales of the firm's products; dead products count as zero.
pub fn aggregate_firm_sales(firm: &FirmState, products: &[ProductState]) -> Result<f64> {
    firm.product_ids.iter().try_fold(0.0, |acc, id| {
        let p = products.get(id.0 as usize).filter(|p| p.id == *id).ok_or_else(|| {
            Error::Consistency(format!("firm {} references missing product {}", firm.id.0, id.0))
        })?;
        Ok(acc + if p.alive { p.sales } else { 0.0 })
    })
}

/// The firm's largest live product; ties go to the smallest id.
pub fn select_cash_cow(firm: &FirmState, products: &[ProductState]) -> Result<ProductId> {
    let mut best: Option<(ProductId, f64)> = None;
    for id in &firm.product_ids {
        let p = products
            .get(id.0 as usize)
            .ok_or_else(|| Error::Consistency(format!("dangling product id {}", id.0)))?;
        if !p.alive {
            continue;
        }
        best = match best {
            Some((bid, by)) if by > p.sales || (by == p.sales && bid < *id) => Some((bid, by)),
            _ => Some((*id, p.sales)),
        };
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::Degenerate(format!("firm {} owns no live product", firm.id.0)))
}

/// Draws whether the firm attaches a new product this step. Returns the
/// initial sales of the new product, which enter the market as new demand.
pub fn attachment_step(firm_sales: f64, cfg: &AttachmentConfig, dt: f64, rng: &mut SimRng) -> Option<f64> {
    if !(firm_sales > 0.0) || cfg.rate == 0.0 {
        return None;
    }
    let p = (cfg.rate * firm_sales * dt / cfg.new_product_size_frac).min(1.0);
    (rng.random::<f64>() < p).then_some(cfg.new_product_size_frac * firm_sales)
}

/// Euler-Maruyama step of `dx = A x dt + x dW` with `Var(dW) = 2 D dt`; `noise`
/// is the increment.
pub fn sde_reduced_step(x: f64, cfg: &AttachmentConfig, dt: f64, noise: f64) -> f64 {
    x + cfg.rate * x * dt + x * noise
}

/// Step of the log-size walk in the attachment potential: `ln x` drifts by
/// `-A dt` and diffuses with coefficient `D`. Its stationary density above a
/// reflecting floor is `x^-(1 + A/D)`.
pub fn potential_step(x: f64, cfg: &AttachmentConfig, dt: f64, noise: f64) -> f64 {
    x * (noise - cfg.rate * dt).exp()
}

/// Density exponent of the stationary firm-size tail.
pub fn stationary_tail_exponent(rate: f64, noise_amplitude: f64) -> Result<f64> {
    if !(noise_amplitude > 0.0) {
        return Err(Error::domain("stationary_tail_exponent", "noise amplitude must be > 0"));
    }
    if rate < 0.0 {
        return Err(Error::domain("stationary_tail_exponent", "attachment rate must be >= 0"));
    }
    Ok(1.0 + rate / noise_amplitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeForm {
    /// Literal Euler-Maruyama step of the reduced equation.
    Literal,
    /// Log-space walk in the attachment potential.
    #[default]
    Potential,
}

fn default_floor() -> f64 {
    1e-3
}

fn default_ks_tolerance() -> f64 {
    0.01
}

fn default_patience() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_firms: usize,
    pub dt: f64,
    pub initial_size: f64,
    /// Firms below this size exit and are re-injected.
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Time between stationarity checkpoints.
    pub checkpoint_every: f64,
    pub min_time: f64,
    pub max_time: f64,
    #[serde(default = "default_ks_tolerance")]
    pub ks_tolerance: f64,
    /// Consecutive checkpoints below the tolerance required to stop.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub form: SdeForm,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_firms < 100 {
            return Err(Error::param("ensemble.n_firms", "need at least 100 firms"));
        }
        for (name, v) in [
            ("ensemble.dt", self.dt),
            ("ensemble.initial_size", self.initial_size),
            ("ensemble.floor", self.floor),
            ("ensemble.checkpoint_every", self.checkpoint_every),
            ("ensemble.max_time", self.max_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and > 0"));
            }
        }
        if self.initial_size <= self.floor {
            return Err(Error::param("ensemble.initial_size", "must exceed the floor"));
        }
        if self.min_time > self.max_time {
            return Err(Error::param("ensemble.min_time", "must not exceed max_time"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub sizes: Vec<f64>,
    pub time: f64,
    /// Whether the checkpoint drift criterion was met before `max_time`.
    pub stationary: bool,
    /// Two-sample KS distance between consecutive checkpoints.
    pub drifts: Vec<f64>,
    pub reinjections: u64,
}

/// Simulates an ensemble of independent firms under the reduced dynamics.
///
/// Firms falling below the floor are re-injected at the 1st percentile of
/// the surviving firms, measured at the start of each checkpoint interval.
/// Stops once the KS distance between consecutive checkpoints stays below
/// the tolerance for `patience` checkpoints (and `min_time` has passed).
pub fn run_sde_ensemble(cfg: &EnsembleConfig, att: &AttachmentConfig, seed: u64) -> Result<EnsembleOutcome> {
    cfg.validate()?;
    att.validate()?;
    let sd = (2.0 * att.noise_amplitude * cfg.dt).sqrt();
    let steps_per_checkpoint = (cfg.checkpoint_every / cfg.dt).round().max(1.0) as u64;
    let mut firms: Vec<(f64, SimRng)> = (0..cfg.n_firms)
        .map(|k| (cfg.initial_size, stream_rng(seed, k as u64)))
        .collect();
    let mut previous: Option<Vec<f64>> = None;
    let mut drifts = Vec::new();
    let mut calm = 0usize;
    let mut time = 0.0;
    let mut reinjections = 0u64;

    while time < cfg.max_time {
        let survivors: Vec<f64> = firms.iter().map(|f| f.0).filter(|&x| x > cfg.floor).collect();
        let reentry = if survivors.is_empty() {
            cfg.initial_size
        } else {
            crate::stats::quantile(&survivors, 0.01).max(cfg.floor * (1.0 + 1e-9))
        };
        let injected: u64 = firms
            .par_iter_mut()
            .with_min_len(512)
            .map(|(x, rng)| {
                let mut count = 0;
                for _ in 0..steps_per_checkpoint {
                    let xi = sd * rng.sample::<f64, _>(StandardNormal);
                    *x = match cfg.form {
                        SdeForm::Literal => sde_reduced_step(*x, att, cfg.dt, xi),
                        SdeForm::Potential => potential_step(*x, att, cfg.dt, xi),
                    };
                    if !(*x > cfg.floor) {
                        *x = reentry;
                        count += 1;
                    }
                }
                count
            })
            .sum();
        reinjections += injected;
        time += steps_per_checkpoint as f64 * cfg.dt;

        let mut current: Vec<f64> = firms.iter().map(|f| f.0).collect();
        if let Some(x) = current.iter().find(|x| !x.is_finite()) {
            return Err(Error::domain("run_sde_ensemble", format!("non-finite firm size {x}")));
        }
        current.sort_by(f64::total_cmp);
        if let Some(prev) = &previous {
            let d = two_sample_ks(prev, &current);
            drifts.push(d);
            calm = if d < cfg.ks_tolerance { calm + 1 } else { 0 };
            if calm >= cfg.patience && time >= cfg.min_time {
                return Ok(EnsembleOutcome {
                    sizes: firms.into_iter().map(|f| f.0).collect(),
                    time,
                    stationary: true,
                    drifts,
                    reinjections,
                });
            }
        }
        previous = Some(current);
    }
    Ok(EnsembleOutcome {
        sizes: firms.into_iter().map(|f| f.0).collect(),
        time,
        stationary: false,
        drifts,
        reinjections,
    })
}
