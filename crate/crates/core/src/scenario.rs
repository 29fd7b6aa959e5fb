//! Scenario files: a TOML document naming the market, the engines to run,
//! the seeds and the analyses to produce.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::firm::{AttachmentConfig, EnsembleConfig};
use crate::lifecycle::{LifeCycleParams, MarketSizeParams, MeanPriceDynamics};
use crate::market::MarketParams;
use crate::micro::MicroConfig;
use crate::stats::TruncationRule;

/// Analyses a scenario can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// Plain micro-engine run: time series and final cross-section.
    MicroRun,
    /// Lognormal fit of product sizes and growth of the log-size variance.
    GibratLognormal,
    /// Firm-size ensemble under attachment growth with a Hill tail fit.
    ParetoTail,
    /// Laplace and Gaussian fits of stationary price deviations.
    LaplacePrice,
    /// Regression of price-fluctuation width on product size.
    SizeVariance,
    /// Scale-mixture and Subbotin fits of generated growth rates.
    GrowthMixture,
    /// Closed-form life cycle: price, adoption, echoes, cost, firm count.
    Lifecycle,
    /// Profit-to-revenue ratio along a micro run.
    ProfitInvariant,
    /// Integration of the mean-price equation.
    MeanPrice,
}

impl Analysis {
    pub const ALL: [Analysis; 9] = [
        Analysis::MicroRun,
        Analysis::GibratLognormal,
        Analysis::ParetoTail,
        Analysis::LaplacePrice,
        Analysis::SizeVariance,
        Analysis::GrowthMixture,
        Analysis::Lifecycle,
        Analysis::ProfitInvariant,
        Analysis::MeanPrice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::MicroRun => "micro_run",
            Analysis::GibratLognormal => "gibrat_lognormal",
            Analysis::ParetoTail => "pareto_tail",
            Analysis::LaplacePrice => "laplace_price",
            Analysis::SizeVariance => "size_variance",
            Analysis::GrowthMixture => "growth_mixture",
            Analysis::Lifecycle => "lifecycle",
            Analysis::ProfitInvariant => "profit_invariant",
            Analysis::MeanPrice => "mean_price",
        }
    }

    /// Whether the analysis consumes a micro-engine run.
    pub fn uses_micro(self) -> bool {
        matches!(
            self,
            Analysis::MicroRun
                | Analysis::GibratLognormal
                | Analysis::LaplacePrice
                | Analysis::SizeVariance
                | Analysis::ProfitInvariant
        )
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown analysis '{s}'")))
    }
}

fn default_total_sales() -> f64 {
    1.0
}

/// Initial products of a micro run, one product per firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialMarket {
    pub n_products: usize,
    /// Total sales shared by the products.
    #[serde(default = "default_total_sales")]
    pub total_sales: f64,
    pub inventory: f64,
    pub preference: f64,
    pub reproduction: f64,
    /// Offset of the anchor price above the natural price.
    #[serde(default)]
    pub anchor_offset: f64,
    /// Sizes are spread log-uniformly over this many decades (0 = equal).
    #[serde(default)]
    pub size_decades: f64,
}

impl InitialMarket {
    pub fn validate(&self) -> Result<()> {
        if self.n_products == 0 {
            return Err(Error::param("initial.n_products", "must be >= 1"));
        }
        if !(self.total_sales > 0.0) {
            return Err(Error::param("initial.total_sales", "must be > 0"));
        }
        if !(self.inventory >= 0.0) {
            return Err(Error::param("initial.inventory", "must be >= 0"));
        }
        if !(self.preference >= 0.0) {
            return Err(Error::param("initial.preference", "must be >= 0"));
        }
        if !(self.size_decades >= 0.0) {
            return Err(Error::param("initial.size_decades", "must be >= 0"));
        }
        Ok(())
    }

    /// Initial sales per product, summing to `total_sales`.
    pub fn sizes(&self) -> Vec<f64> {
        let n = self.n_products;
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                10f64.powf(self.size_decades * frac)
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|r| r * self.total_sales / sum).collect()
    }
}

/// Grid for closed-form and ODE evaluations on the long time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub horizon: f64,
    pub points: usize,
    /// End of the window used for the learning-curve fit (default: horizon).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_until: Option<f64>,
}

impl Timeline {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("timeline.horizon", "must be finite and > 0"));
        }
        if self.points < 3 {
            return Err(Error::param("timeline.points", "must be >= 3"));
        }
        if let Some(t) = self.fit_until {
            if !(t > 0.0 && t <= self.horizon) {
                return Err(Error::param("timeline.fit_until", "must lie in (0, horizon]"));
            }
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.points - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points).map(|i| i as f64 * self.step()).collect()
    }
}

fn default_micro_steps() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPriceConfig {
    pub dynamics: MeanPriceDynamics,
    /// Initial offset of the mean price above the natural price.
    pub start_offset: f64,
    /// Price variance used when not coupled to a micro run.
    #[serde(default)]
    pub variance: f64,
    /// Measure the variance from a micro run stepped inside each macro step.
    #[serde(default)]
    pub coupled: bool,
    #[serde(default = "default_micro_steps")]
    pub micro_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub n_samples: usize,
    /// Laplace scale of the smallest unit.
    pub sigma_min: f64,
    /// Scale exponent of the fluctuation width in the unit size.
    pub beta: f64,
    /// Decades spanned by the unit sizes.
    pub decades: f64,
    #[serde(default)]
    pub truncation: TruncationRule,
}

fn default_alpha_jitter() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitConfig {
    /// Half-width of the uniform per-product perturbation of the cost ratio.
    #[serde(default = "default_alpha_jitter")]
    pub alpha_jitter: f64,
}

fn default_resamples() -> usize {
    200
}

fn default_tail_fraction() -> f64 {
    0.05
}

fn default_size_bins() -> usize {
    10
}

fn default_burn_in() -> f64 {
    0.2
}

/// Numerical knobs of the fitting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Parametric-bootstrap resamples for goodness of fit (0 = asymptotic).
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_size_bins")]
    pub size_bins: usize,
    /// Fraction of snapshots discarded before stationary statistics.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            bootstrap_resamples: default_resamples(),
            tail_fraction: default_tail_fraction(),
            size_bins: default_size_bins(),
            burn_in: default_burn_in(),
        }
    }
}

/// Runs the scenario once per value of a numeric key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// Dotted path of the swept key, e.g. `attachment.rate`.
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seeds: Vec<u64>,
    /// Micro-engine steps.
    #[serde(default)]
    pub horizon: u64,
    pub outputs: Vec<Analysis>,
    pub market: MarketParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro: Option<MicroConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialMarket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<AttachmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifecycle: Option<LifeCycleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market_size: Option<MarketSizeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<Timeline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_price: Option<MeanPriceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profit: Option<ProfitConfig>,
    #[serde(default)]
    pub fitting: FitSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn require<T>(section: &Option<T>, name: &str, analysis: Analysis) -> Result<()> {
    if section.is_none() {
        return Err(Error::Validation(format!(
            "analysis '{analysis}' needs a [{name}] section"
        )));
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::param("name", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::param("seeds", "at least one seed is required"));
        }
        if self.outputs.is_empty() {
            return Err(Error::param("outputs", "at least one analysis is required"));
        }
        self.market.validate()?;
        for &a in &self.outputs {
            if a.uses_micro() {
                require(&self.micro, "micro", a)?;
                require(&self.initial, "initial", a)?;
                if self.horizon == 0 {
                    return Err(Error::param("horizon", format!("analysis '{a}' needs horizon >= 1")));
                }
            }
            match a {
                Analysis::ParetoTail => {
                    require(&self.attachment, "attachment", a)?;
                    require(&self.ensemble, "ensemble", a)?;
                }
                Analysis::GrowthMixture => require(&self.mixture, "mixture", a)?,
                Analysis::Lifecycle => {
                    require(&self.lifecycle, "lifecycle", a)?;
                    require(&self.market_size, "market_size", a)?;
                    require(&self.timeline, "timeline", a)?;
                }
                Analysis::MeanPrice => {
                    require(&self.mean_price, "mean_price", a)?;
                    require(&self.timeline, "timeline", a)?;
                    if self.mean_price.as_ref().is_some_and(|m| m.coupled) {
                        require(&self.micro, "micro", a)?;
                        require(&self.initial, "initial", a)?;
                    }
                }
                _ => {}
            }
        }
        if let Some(m) = &self.micro {
            m.validate()?;
        }
        if let Some(i) = &self.initial {
            i.validate()?;
        }
        if let Some(a) = &self.attachment {
            a.validate()?;
        }
        if let Some(e) = &self.ensemble {
            e.validate()?;
        }
        if let Some(l) = &self.lifecycle {
            l.validate()?;
        }
        if let Some(m) = &self.market_size {
            m.validate()?;
        }
        if let Some(t) = &self.timeline {
            t.validate()?;
        }
        if let Some(m) = &self.mean_price {
            m.dynamics.validate()?;
            if !(m.variance >= 0.0) {
                return Err(Error::param("mean_price.variance", "must be >= 0"));
            }
        }
        if let Some(m) = &self.mixture {
            if m.n_samples < 100 || !(m.sigma_min > 0.0) || !(m.decades >= 0.0) {
                return Err(Error::param(
                    "mixture",
                    "need n_samples >= 100, sigma_min > 0 and decades >= 0",
                ));
            }
        }
        if let Some(p) = &self.profit {
            if !(p.alpha_jitter >= 0.0) {
                return Err(Error::param("profit.alpha_jitter", "must be >= 0"));
            }
        }
        let f = &self.fitting;
        if !(f.tail_fraction > 0.0 && f.tail_fraction <= 0.5) {
            return Err(Error::param("fitting.tail_fraction", "must lie in (0, 0.5]"));
        }
        if !(0.0..1.0).contains(&f.burn_in) {
            return Err(Error::param("fitting.burn_in", "must lie in [0, 1)"));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::param("sweep.values", "must not be empty"));
            }
            for v in &sw.values {
                self.with_value(&sw.key, *v)?.validate_without_sweep()?;
            }
        }
        Ok(())
    }

    fn validate_without_sweep(mut self) -> Result<()> {
        self.sweep = None;
        self.validate()
    }

    /// Canonical TOML text of the scenario.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("cannot serialize scenario: {e}")))
    }

    /// SHA-256 of the canonical TOML text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// A copy with the dotted `key` set to `value`.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Scenario> {
        let mut doc = toml::Value::try_from(self)
            .map_err(|e| Error::Validation(format!("cannot serialize scenario: {e}")))?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::param("sweep.key", format!("'{key}' does not name a scenario key")))?;
        }
        *slot = match slot {
            toml::Value::Float(_) => toml::Value::Float(value),
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            _ => return Err(Error::param("sweep.key", format!("'{key}' is not a numeric key"))),
        };
        let mut out: Scenario = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(format!("swept scenario is invalid: {e}")))?;
        out.sweep = None;
        Ok(out)
    }

    /// One scenario per sweep value, labelled `key=value`; the scenario itself
    /// when no sweep is declared.
    pub fn variants(&self) -> Result<Vec<(Option<String>, Scenario)>> {
        match &self.sweep {
            None => Ok(vec![(None, self.clone())]),
            Some(sw) => sw
                .values
                .iter()
                .map(|v| Ok((Some(format!("{}={v}", sw.key)), self.with_value(&sw.key, *v)?)))
                .collect(),
        }
    }
}

/// Strictness of the loader towards keys it does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyPolicy {
    /// Unknown keys are errors.
    #[default]
    Strict,
    /// Unknown keys are returned as warnings.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Best-effort location of a dotted key: the line inside the matching table
/// (or inline assignment) where the last path element is assigned.
fn locate_key(text: &str, path: &[String]) -> Option<(usize, usize)> {
    let (last, parents) = path.split_last()?;
    let mut table: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(header) = trimmed.strip_prefix('[') {
            let header = header.trim_start_matches('[');
            let name = header.split(']').next().unwrap_or("");
            table = name.split('.').map(|s| s.trim().trim_matches('"').to_string()).collect();
            continue;
        }
        let Some((lhs, _)) = trimmed.split_once('=') else {
            continue;
        };
        let mut full = table.clone();
        full.extend(lhs.trim().split('.').map(|s| s.trim().trim_matches('"').to_string()));
        if full.last() == Some(last) && full[..full.len() - 1] == *parents {
            return Some((i + 1, line.len() - trimmed.len() + 1));
        }
    }
    None
}

/// Parses scenario text. `origin` names the source in diagnostics.
pub fn parse_scenario(text: &str, origin: &str, policy: KeyPolicy) -> Result<LoadedScenario> {
    let de = toml::Deserializer::parse(text).map_err(|e| parse_error(text, origin, &e))?;
    let mut unknown: Vec<Vec<String>> = Vec::new();
    let scenario: Scenario = serde_ignored::deserialize(de, |path| {
        unknown.push(path.to_string().split('.').filter(|s| *s != "?").map(str::to_string).collect());
    })
    .map_err(|e: toml::de::Error| parse_error(text, origin, &e))?;
    let warnings: Vec<String> = unknown
        .iter()
        .map(|p| match locate_key(text, p) {
            Some((l, c)) => format!("{origin}:{l}:{c}: unknown key '{}'", p.join(".")),
            None => format!("{origin}: unknown key '{}'", p.join(".")),
        })
        .collect();
    if policy == KeyPolicy::Strict && !warnings.is_empty() {
        return Err(Error::Parse {
            path: origin.into(),
            message: warnings.join("; "),
        });
    }
    scenario.validate()?;
    Ok(LoadedScenario { scenario, warnings })
}

fn parse_error(text: &str, origin: &str, e: &toml::de::Error) -> Error {
    let message = match e.span() {
        Some(span) => {
            let (l, c) = line_col(text, span.start);
            format!("{l}:{c}: {}", e.message())
        }
        None => e.message().to_string(),
    };
    Error::Parse {
        path: origin.into(),
        message,
    }
}

/// Reads and validates a scenario file, rejecting unknown keys.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_scenario_with(path, KeyPolicy::Strict).map(|l| l.scenario)
}

pub fn load_scenario_with(path: &Path, policy: KeyPolicy) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, &path.display().to_string(), policy)
}
