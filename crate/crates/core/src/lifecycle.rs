//! Long-time-scale market evolution: mean-price decline, Gompertz adoption,
//! replacement echoes, learning curve, profit ratio and firm count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{demand_rate, market_volume, market_volume_slope, MarketParams};
use crate::micro::MicroEngine;
use crate::stats::optim::{golden_section, linear_fit};

fn default_adopter_scale() -> f64 {
    1.0
}

fn default_echo_depth() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeCycleParams {
    /// Rate at which the mean price approaches the natural price.
    pub price_decline_rate: f64,
    /// Initial offset of the mean price above the natural price.
    pub initial_offset: f64,
    /// Gompertz scale; see [`consistent_kappa`] for the value implied by the
    /// demand width.
    pub kappa: f64,
    #[serde(default = "default_adopter_scale")]
    pub adopter_scale: f64,
    /// Number of replacement echoes summed.
    #[serde(default = "default_echo_depth")]
    pub echo_depth: u32,
}

impl LifeCycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.price_decline_rate > 0.0 && self.price_decline_rate.is_finite()) {
            return Err(Error::param(
                "lifecycle.price_decline_rate",
                "must be > 0 (a frozen price has no life cycle)",
            ));
        }
        if !(self.initial_offset >= 0.0) {
            return Err(Error::param("lifecycle.initial_offset", "must be >= 0"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::param("lifecycle.kappa", "must be finite and > 0"));
        }
        if !(self.adopter_scale > 0.0) {
            return Err(Error::param("lifecycle.adopter_scale", "must be > 0"));
        }
        Ok(())
    }
}

/// Gompertz scale implied by a Gaussian demand curve of width `demand_width`
/// when the price starts `initial_offset` above the natural price.
pub fn consistent_kappa(initial_offset: f64, demand_width: f64) -> f64 {
    initial_offset * initial_offset / (2.0 * demand_width * demand_width)
}

fn check_time(t: f64, op: &'static str) -> Result<()> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::domain(op, format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Mean real price, decaying exponentially toward the natural price.
pub fn mean_price(t: f64, lc: &LifeCycleParams, mp: &MarketParams) -> Result<f64> {
    check_time(t, "mean_price")?;
    Ok(lc.initial_offset * (-lc.price_decline_rate * t).exp() + mp.natural_price)
}

/// Gompertz adopter density.
pub fn gompertz_adopters(t: f64, lc: &LifeCycleParams) -> Result<f64> {
    check_time(t, "gompertz_adopters")?;
    Ok(lc.adopter_scale * (-lc.kappa * (-2.0 * lc.price_decline_rate * t).exp()).exp())
}

/// First-purchase sales, the time derivative of the adopter density.
pub fn first_purchase_sales(t: f64, lc: &LifeCycleParams) -> Result<f64> {
    check_time(t, "first_purchase_sales")?;
    let a = lc.price_decline_rate;
    Ok(2.0 * a * lc.kappa * gompertz_adopters(t, lc)? * (-2.0 * a * t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalesBreakdown {
    pub first: f64,
    pub multiple: f64,
    pub replacement: f64,
    pub total: f64,
}

/// Total sales: first purchases, multiple purchases and the replacement
/// echoes of earlier first purchases (`chi^k` weight at lag `k t_p`).
pub fn total_sales(t: f64, lc: &LifeCycleParams, mp: &MarketParams) -> Result<SalesBreakdown> {
    let first = first_purchase_sales(t, lc)?;
    let multiple = mp.multiple_purchase_rate * market_volume(mean_price(t, lc, mp)?, mp)?;
    let mut replacement = 0.0;
    let mut weight = 1.0;
    for k in 1..=lc.echo_depth {
        let lagged = t - k as f64 * mp.product_lifetime;
        if lagged <= 0.0 {
            break;
        }
        weight *= mp.replacement_fraction;
        replacement += weight * first_purchase_sales(lagged, lc)?;
    }
    Ok(SalesBreakdown {
        first,
        multiple,
        replacement,
        total: first + multiple + replacement,
    })
}

/// Mean unit cost following the mean price at a fixed cost-to-price ratio.
pub fn learning_curve(t: f64, lc: &LifeCycleParams, mp: &MarketParams) -> Result<f64> {
    Ok(mp.alpha_mean * mean_price(t, lc, mp)?)
}

/// Running trapezoid integral of `values` over `times`.
pub fn cumulative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Exponent of `cost ~ output^-exponent`.
    pub exponent: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `cost ~ output^-exponent` over the points whose cumulative output lies
/// between `lo` and `hi` times the final output.
pub fn henderson_fit(output: &[f64], cost: &[f64], lo: f64, hi: f64) -> Result<PowerLawFit> {
    let total = output.last().copied().unwrap_or(0.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) = output
        .iter()
        .zip(cost)
        .filter(|(w, c)| **w >= lo * total && **w <= hi * total && **w > 0.0 && **c > 0.0)
        .map(|(w, c)| (w.ln(), c.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientData("fewer than 3 points in the output window".into()));
    }
    let fit = linear_fit(&xs, &ys);
    Ok(PowerLawFit {
        exponent: -fit.slope,
        r_squared: fit.r_squared,
        points: xs.len(),
    })
}

/// Learning-curve exponent of a given cost reduction per doubling of output.
pub fn doubling_exponent(reduction_per_doubling: f64) -> f64 {
    (1.0 / (1.0 - reduction_per_doubling)).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductEconomics {
    pub price: f64,
    pub unit_cost: f64,
    pub sales: f64,
}

/// Ratio of total profit to total revenue.
pub fn profit_invariant(products: &[ProductEconomics]) -> Result<f64> {
    let revenue: f64 = products.iter().map(|p| p.price * p.sales).sum();
    if !(revenue > 0.0) {
        return Err(Error::domain("profit_invariant", "revenue must be > 0"));
    }
    let profit: f64 = products.iter().map(|p| (p.price - p.unit_cost) * p.sales).sum();
    Ok(profit / revenue)
}

fn default_regime_threshold() -> f64 {
    0.1
}

fn default_min_dwell() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSizeParams {
    /// Firms per unit of revenue (currency per time).
    pub firms_per_revenue: f64,
    /// Firm count at zero revenue.
    pub baseline_firms: f64,
    /// Relative revenue change rate below which the firm count freezes.
    #[serde(default = "default_regime_threshold")]
    pub regime_threshold: f64,
    /// Time the rate must stay below the threshold before freezing.
    #[serde(default = "default_min_dwell")]
    pub min_dwell: f64,
}

impl MarketSizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.firms_per_revenue > 0.0) {
            return Err(Error::param("market_size.firms_per_revenue", "must be > 0"));
        }
        if !(self.regime_threshold > 0.0) {
            return Err(Error::param("market_size.regime_threshold", "must be > 0"));
        }
        if !(self.min_dwell >= 0.0) {
            return Err(Error::param("market_size.min_dwell", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRegime {
    /// Firm count proportional to revenue.
    Tracking,
    /// Firm count frozen once revenue changes slowly.
    Settled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSizePoint {
    pub t: f64,
    pub n_firms: f64,
    pub regime: SizeRegime,
}

/// Firm count along a revenue trajectory. Tracks `B R + N0` while revenue
/// changes fast; once `|dR/dt| / R` stays below the threshold for `min_dwell`,
/// the count freezes at its value at the start of that calm stretch.
pub fn market_size(times: &[f64], revenue: &[f64], msp: &MarketSizeParams) -> Result<Vec<MarketSizePoint>> {
    msp.validate()?;
    if times.len() != revenue.len() {
        return Err(Error::param("revenue", "length must match times"));
    }
    if let Some(r) = revenue.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::domain("market_size", format!("revenue must be >= 0, got {r}")));
    }
    let n = times.len();
    let mut out = Vec::with_capacity(n);
    let mut calm_since: Option<usize> = None;
    let mut frozen: Option<f64> = None;
    for i in 0..n {
        let tracking = msp.firms_per_revenue * revenue[i] + msp.baseline_firms;
        if frozen.is_none() && n > 1 {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let slope = (revenue[b] - revenue[a]) / (times[b] - times[a]);
            let rel = if revenue[i] > 0.0 { slope.abs() / revenue[i] } else { f64::INFINITY };
            if rel < msp.regime_threshold {
                let start = *calm_since.get_or_insert(i);
                if times[i] - times[start] >= msp.min_dwell {
                    frozen = Some(out.get(start).map_or(tracking, |p: &MarketSizePoint| p.n_firms));
                }
            } else {
                calm_since = None;
            }
        }
        out.push(match frozen {
            Some(v) => MarketSizePoint {
                t: times[i],
                n_firms: v,
                regime: SizeRegime::Settled,
            },
            None => MarketSizePoint {
                t: times[i],
                n_firms: tracking,
                regime: SizeRegime::Tracking,
            },
        });
    }
    Ok(out)
}

/// Nominal revenue per unit time: income times potential times mean real
/// price times total sales density.
pub fn nominal_revenue(mean_price: f64, total_sales: f64, mp: &MarketParams) -> f64 {
    mp.mean_income * mp.market_potential * mean_price * total_sales
}

// ------------------------------------------------------------ mean-price ODE

/// Mean relative excess of supply over sales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcessSupply {
    Constant { value: f64 },
    Step { before: f64, after: f64, at: f64 },
}

impl ExcessSupply {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ExcessSupply::Constant { value } => value,
            ExcessSupply::Step { before, after, at } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
        }
    }
}

/// Coefficients of the mean-price equation
/// `dmu/dt = eta Var / (d eta_z z_t) |dd/dmu| (d - s_t)` with `s_t = (1 + gamma) d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPriceDynamics {
    pub preference_mean: f64,
    pub preference_inventory_mean: f64,
    pub total_inventory: f64,
    pub excess_supply: ExcessSupply,
}

impl MeanPriceDynamics {
    pub fn validate(&self) -> Result<()> {
        if !(self.preference_mean > 0.0 && self.preference_inventory_mean > 0.0 && self.total_inventory > 0.0) {
            return Err(Error::param(
                "mean_price_dynamics",
                "preferences and inventory must be > 0",
            ));
        }
        Ok(())
    }

    /// Time derivative of the mean price.
    pub fn rate(&self, t: f64, mu: f64, variance: f64, mp: &MarketParams) -> f64 {
        let mu = mu.max(0.0);
        let d = demand_rate(mu, mp.repurchase_rate, mp).unwrap_or(0.0);
        if d <= 0.0 {
            return 0.0;
        }
        let s_t = (1.0 + self.excess_supply.at(t)) * d;
        let slope = (mp.repurchase_rate * market_volume_slope(mu, mp)).abs();
        self.preference_mean * variance / (d * self.preference_inventory_mean * self.total_inventory) * slope * (d - s_t)
    }

    /// Relaxation rate of the linearized equation near the natural price.
    pub fn linear_rate(&self, variance: f64, mp: &MarketParams) -> f64 {
        self.excess_supply.at(0.0) * self.preference_mean * variance * mp.repurchase_rate * mp.lower_share()
            / (self.preference_inventory_mean * self.total_inventory * mp.demand_width * mp.demand_width)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceTrajectory {
    pub times: Vec<f64>,
    pub prices: Vec<f64>,
    pub variances: Vec<f64>,
    pub diagnostics: Vec<String>,
}

const ODE_RTOL: f64 = 1e-8;
const ODE_ATOL: f64 = 1e-12;

/// Adaptive Dormand-Prince 5(4) integration of a scalar ODE from `t0` to `t1`.
pub fn dopri5(f: impl Fn(f64, f64) -> f64, t0: f64, y0: f64, t1: f64, rtol: f64, atol: f64) -> Result<f64> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let mut t = t0;
    let mut y = y0;
    let mut h = span / 100.0;
    for _ in 0..1_000_000 {
        if (t1 - t) * span.signum() <= 0.0 {
            return Ok(y);
        }
        if (t + h - t1) * span.signum() > 0.0 {
            h = t1 - t;
        }
        let mut k = [0.0; 7];
        for i in 0..7 {
            let yi = y + h * (0..i).map(|j| A[i][j] * k[j]).sum::<f64>();
            k[i] = f(t + C[i] * h, yi);
        }
        let y5 = y + h * (0..7).map(|i| B5[i] * k[i]).sum::<f64>();
        let y4 = y + h * (0..7).map(|i| B4[i] * k[i]).sum::<f64>();
        let tol = atol + rtol * y.abs().max(y5.abs());
        let err = (y5 - y4).abs() / tol;
        if !y5.is_finite() {
            return Err(Error::domain("dopri5", "solution became non-finite"));
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Err(Error::domain("dopri5", "step budget exhausted"))
}

/// Integrates the mean-price equation with a prescribed price variance.
pub fn integrate_mean_price(
    dynamics: &MeanPriceDynamics,
    variance: impl Fn(f64) -> f64,
    start_price: f64,
    horizon: f64,
    n_out: usize,
    mp: &MarketParams,
) -> Result<PriceTrajectory> {
    dynamics.validate()?;
    if n_out < 2 || !(horizon > 0.0) {
        return Err(Error::param("horizon", "need horizon > 0 and at least 2 output points"));
    }
    let mut traj = PriceTrajectory::default();
    let mut mu = start_price;
    let dt = horizon / (n_out - 1) as f64;
    for i in 0..n_out {
        let t = i as f64 * dt;
        let v = variance(t);
        if !(v >= 0.0) {
            return Err(Error::domain("integrate_mean_price", format!("variance must be >= 0, got {v}")));
        }
        if i == 0 && v == 0.0 {
            traj.diagnostics
                .push("zero price variance: no competition, the mean price stays frozen".into());
        }
        traj.times.push(t);
        traj.prices.push(mu);
        traj.variances.push(v);
        if i + 1 < n_out {
            mu = dopri5(|s, m| dynamics.rate(s, m, variance(s), mp), t, mu, t + dt, ODE_RTOL, ODE_ATOL)?;
        }
    }
    Ok(traj)
}

/// Couples the mean-price equation to a running micro engine: each macro step
/// runs `micro_steps` short steps with the anchor at the current mean price,
/// measures the sales-weighted price variance averaged over the block, and
/// advances the mean price with that variance held fixed.
pub fn integrate_coupled(
    dynamics: &MeanPriceDynamics,
    engine: &mut MicroEngine,
    start_price: f64,
    macro_dt: f64,
    n_macro: usize,
    micro_steps: u64,
) -> Result<PriceTrajectory> {
    dynamics.validate()?;
    if micro_steps == 0 {
        return Err(Error::param("micro_steps", "must be >= 1"));
    }
    let mp = engine.params().clone();
    let mut traj = PriceTrajectory::default();
    let mut mu = start_price;
    for i in 0..n_macro {
        let t = i as f64 * macro_dt;
        engine.state.anchor_price = mu;
        let mut acc = 0.0;
        for _ in 0..micro_steps {
            engine.step()?;
            acc += engine.state.price_variance();
        }
        let v = acc / micro_steps as f64;
        traj.times.push(t);
        traj.prices.push(mu);
        traj.variances.push(v);
        mu = dopri5(|s, m| dynamics.rate(s, m, v, &mp), t, mu, t + macro_dt, ODE_RTOL, ODE_ATOL)?;
    }
    traj.times.push(n_macro as f64 * macro_dt);
    traj.prices.push(mu);
    traj.variances.push(*traj.variances.last().unwrap_or(&0.0));
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub amplitude: f64,
    pub rate: f64,
    pub asymptote: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `amplitude * exp(-rate t) + asymptote`.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<ExponentialFit> {
    if times.len() < 4 || times.len() != values.len() {
        return Err(Error::InsufficientData("need at least 4 matching points".into()));
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > 0.0) {
        return Err(Error::Degenerate("time span is zero".into()));
    }
    let solve = |rate: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = times.iter().map(|t| (-rate * t).exp()).collect();
        let fit = linear_fit(&xs, values);
        let sse: f64 = xs
            .iter()
            .zip(values)
            .map(|(x, y)| (y - fit.intercept - fit.slope * x).powi(2))
            .sum();
        (fit.slope, fit.intercept, sse)
    };
    let (log_rate, _) = golden_section(|lr| solve(lr.exp()).2, (1e-3 / span).ln(), (200.0 / span).ln(), 1e-12);
    let rate = log_rate.exp();
    let (amplitude, asymptote, sse) = solve(rate);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sst: f64 = values.iter().map(|y| (y - mean).powi(2)).sum();
    Ok(ExponentialFit {
        amplitude,
        rate,
        asymptote,
        r_squared: 1.0 - sse / sst,
    })
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::test_params;

    fn lc() -> LifeCycleParams {
        LifeCycleParams {
            price_decline_rate: 0.3,
            initial_offset: 0.1,
            kappa: 3.0,
            adopter_scale: 1.0,
            echo_depth: 3,
        }
    }

    #[test]
    fn mean_price_examples() {
        let (l, p) = (lc(), test_params());
        assert!((mean_price(0.0, &l, &p).unwrap() - (0.1 + p.natural_price)).abs() < 1e-15);
        assert!((mean_price(1e4, &l, &p).unwrap() - p.natural_price).abs() < 1e-15);
        let at = mean_price(1.0 / l.price_decline_rate, &l, &p).unwrap();
        assert!((at - (0.1 / std::f64::consts::E + p.natural_price)).abs() < 1e-15);
        assert!(mean_price(-1.0, &l, &p).is_err());
    }

    #[test]
    fn mean_price_strictly_decreasing() {
        let (l, p) = (lc(), test_params());
        let xs: Vec<f64> = (0..100).map(|i| mean_price(i as f64 * 0.3, &l, &p).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn gompertz_examples() {
        let l = lc();
        assert!((gompertz_adopters(0.0, &l).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!((gompertz_adopters(1e3, &l).unwrap() - 1.0).abs() < 1e-15);
        let ts: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let ns: Vec<f64> = ts.iter().map(|&t| gompertz_adopters(t, &l).unwrap()).collect();
        assert!(ns.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn first_purchases_are_derivative_of_adopters() {
        let l = lc();
        let h = 1e-4;
        for i in 1..100 {
            let t = i as f64 * 0.3;
            let fd = (gompertz_adopters(t + h, &l).unwrap() - gompertz_adopters(t - h, &l).unwrap()) / (2.0 * h);
            let yf = first_purchase_sales(t, &l).unwrap();
            assert!((fd - yf).abs() <= 1e-6 * yf.abs() + 1e-10, "t={t}");
        }
        assert!(first_purchase_sales(1e3, &l).unwrap() < 1e-100);
    }

    #[test]
    fn frozen_price_has_no_first_purchases() {
        let mut l = lc();
        l.price_decline_rate = 0.0;
        assert_eq!(first_purchase_sales(5.0, &l).unwrap(), 0.0);
        assert!(l.validate().is_err());
    }

    #[test]
    fn replacement_case_split_and_echo_free_limit() {
        let (l, mut p) = (lc(), test_params());
        let before = total_sales(0.5 * p.product_lifetime, &l, &p).unwrap();
        assert_eq!(before.replacement, 0.0);
        p.replacement_fraction = 0.0;
        p.multiple_purchase_rate = 0.0;
        let ys: Vec<f64> = (0..600)
            .map(|i| total_sales(i as f64 * 0.1, &l, &p).unwrap().total)
            .collect();
        assert!(local_maxima(&ys).len() <= 1);
    }

    #[test]
    fn doubling_exponent_for_twenty_percent() {
        assert!((doubling_exponent(0.2) - 0.321_928_094_887_362_3).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_at_unit_cost_ratio() {
        let (l, mut p) = (lc(), test_params());
        p.alpha_mean = 1.0;
        let t = 2.0;
        assert_eq!(learning_curve(t, &l, &p).unwrap(), mean_price(t, &l, &p).unwrap());
    }

    #[test]
    fn profit_invariant_examples() {
        let rows = |price: f64| {
            vec![
                ProductEconomics {
                    price,
                    unit_cost: 0.8 * price,
                    sales: 0.3,
                },
                ProductEconomics {
                    price: 2.0 * price,
                    unit_cost: 1.6 * price,
                    sales: 0.1,
                },
            ]
        };
        let a = profit_invariant(&rows(1.0)).unwrap();
        assert!((a - 0.2).abs() < 1e-12);
        assert!((profit_invariant(&rows(0.37)).unwrap() - a).abs() < 1e-12);
        assert!(profit_invariant(&[]).is_err());
    }

    #[test]
    fn market_size_examples() {
        let msp = MarketSizeParams {
            firms_per_revenue: 1.8e-5,
            baseline_firms: 0.0,
            regime_threshold: 0.1,
            min_dwell: 1.0,
        };
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let rs: Vec<f64> = ts.iter().map(|t| 1e6 * (1.0 + t)).collect();
        let out = market_size(&ts, &rs, &msp).unwrap();
        assert!((out[10].n_firms - 1.8e-5 * rs[10]).abs() < 1e-9);
        let zero = market_size(&[0.0, 1.0], &[0.0, 0.0], &msp).unwrap();
        assert_eq!(zero[0].n_firms, 0.0);
        assert!(market_size(&[0.0], &[-1.0], &msp).is_err());
    }

    #[test]
    fn firm_count_peaks_with_revenue() {
        let msp = MarketSizeParams {
            firms_per_revenue: 1e-3,
            baseline_firms: 5.0,
            regime_threshold: 0.1,
            min_dwell: 2.0,
        };
        let ts: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let rs: Vec<f64> = ts.iter().map(|t| 1e4 * (-(t - 6.0) * (t - 6.0) / 4.0).exp()).collect();
        let n: Vec<f64> = market_size(&ts, &rs, &msp).unwrap().iter().map(|p| p.n_firms).collect();
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmax(&n), argmax(&rs));
    }

    #[test]
    fn dopri_matches_exponential() {
        let y = dopri5(|_, y| -0.7 * y, 0.0, 2.0, 3.0, 1e-10, 1e-14).unwrap();
        assert!((y - 2.0 * (-2.1f64).exp()).abs() < 1e-9);
    }

    fn dynamics(gamma: f64) -> MeanPriceDynamics {
        MeanPriceDynamics {
            preference_mean: 1.0,
            preference_inventory_mean: 1.0,
            total_inventory: 1.0,
            excess_supply: ExcessSupply::Constant { value: gamma },
        }
    }

    #[test]
    fn zero_variance_freezes_price() {
        let p = test_params();
        let traj = integrate_mean_price(&dynamics(0.1), |_| 0.0, 0.05, 10.0, 11, &p).unwrap();
        assert!(traj.prices.iter().all(|&m| m == 0.05));
        assert!(!traj.diagnostics.is_empty());
        assert!(integrate_mean_price(&dynamics(0.1), |_| -1.0, 0.05, 10.0, 11, &p).is_err());
    }

    #[test]
    fn linear_regime_is_exponential() {
        let p = test_params();
        let dynm = dynamics(0.1);
        let var = 1e-3;
        let k = dynm.linear_rate(var, &p);
        let horizon = 5.0 / k;
        let start = p.natural_price + 0.05 * p.demand_width;
        let traj = integrate_mean_price(&dynm, |_| var, start, horizon, 200, &p).unwrap();
        let fit = fit_exponential(&traj.times, &traj.prices).unwrap();
        assert!(fit.r_squared > 0.999);
        assert!((fit.rate - k).abs() / k < 0.02, "{} vs {k}", fit.rate);
    }

    #[test]
    fn price_rises_when_demand_exceeds_supply() {
        let p = test_params();
        let mut dynm = dynamics(0.1);
        dynm.excess_supply = ExcessSupply::Step {
            before: 0.1,
            after: -0.1,
            at: 1.0,
        };
        let mu = p.natural_price + 0.02;
        assert!(dynm.rate(0.5, mu, 1e-3, &p) < 0.0);
        assert!(dynm.rate(1.5, mu, 1e-3, &p) > 0.0);
    }

    #[test]
    fn exponential_fit_recovers_parameters() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 0.3 * (-0.45 * t).exp() + 0.05).collect();
        let f = fit_exponential(&ts, &ys).unwrap();
        assert!((f.rate - 0.45).abs() < 1e-6 && (f.asymptote - 0.05).abs() < 1e-8);
    }
}
