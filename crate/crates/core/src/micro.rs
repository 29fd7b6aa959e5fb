//! Short-time-scale dynamics: purchases, inventories, consumer balance,
//! replicator selection of sales and mean-reverting price fluctuations.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{demand_rate, MarketParams, MarketState, ProductState};
use crate::noise::{generate_correlated, NoiseKind, NoiseSpec};
use crate::record::{Provenance, RunRecord, Snapshot};
use crate::rng::{derive_seed, stream_rng, SimRng};

/// How fitness is formed each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMode {
    /// Fitness uses the consumer density at the anchor price; fluctuations
    /// enter only as direct growth-rate shocks.
    #[default]
    Direct,
    /// Fitness uses the consumer density at each product's own price, so price
    /// fluctuations feed through the demand curve.
    Decomposed,
}

/// How the width of a product's price fluctuations depends on its size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PriceCoupling {
    /// Same fluctuation law for every product.
    #[default]
    Uniform,
    /// Width scales as `(sales / reference_size)^-beta`.
    Direct { beta: f64, reference_size: f64 },
    /// Width is the standard deviation of the block mean of a correlated
    /// activity stream over `sales / activity_unit` samples.
    Aggregated { activity_unit: f64, stream_length: usize },
}

fn default_y_floor() -> f64 {
    1e-9
}

fn default_record_every() -> u64 {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroConfig {
    /// Short-time step.
    pub dt: f64,
    /// Magnitude of the sign force pulling prices back to the anchor.
    pub restoring_strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness_noise: Option<NoiseSpec>,
    #[serde(default = "default_y_floor")]
    pub y_floor: f64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default)]
    pub fitness_mode: FitnessMode,
    #[serde(default)]
    pub price_coupling: PriceCoupling,
    /// Abort when `dt` exceeds the replicator stability bound.
    #[serde(default = "default_true")]
    pub check_stability: bool,
}

impl MicroConfig {
    pub fn new(dt: f64, restoring_strength: f64) -> Self {
        Self {
            dt,
            restoring_strength,
            price_noise: None,
            fitness_noise: None,
            y_floor: default_y_floor(),
            record_every: default_record_every(),
            fitness_mode: FitnessMode::default(),
            price_coupling: PriceCoupling::default(),
            check_stability: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("micro.dt", "must be finite and > 0"));
        }
        if !(self.restoring_strength >= 0.0) {
            return Err(Error::param("micro.restoring_strength", "must be >= 0"));
        }
        if !(self.y_floor >= 0.0) {
            return Err(Error::param("micro.y_floor", "must be >= 0"));
        }
        if self.record_every == 0 {
            return Err(Error::param("micro.record_every", "must be >= 1"));
        }
        for (name, spec) in [("price_noise", &self.price_noise), ("fitness_noise", &self.fitness_noise)] {
            if let Some(s) = spec {
                s.validate().map_err(|e| Error::param(format!("micro.{name}"), e.to_string()))?;
            }
        }
        match self.price_coupling {
            PriceCoupling::Uniform => {}
            PriceCoupling::Direct { beta, reference_size } => {
                if !(beta.is_finite() && reference_size > 0.0) {
                    return Err(Error::param(
                        "micro.price_coupling",
                        "direct coupling needs finite beta and reference_size > 0",
                    ));
                }
            }
            PriceCoupling::Aggregated {
                activity_unit,
                stream_length,
            } => {
                if !(activity_unit > 0.0) || stream_length < 1024 {
                    return Err(Error::param(
                        "micro.price_coupling",
                        "aggregated coupling needs activity_unit > 0 and stream_length >= 1024",
                    ));
                }
                match &self.price_noise {
                    Some(s) if s.kind == NoiseKind::Correlated => {}
                    _ => {
                        return Err(Error::param(
                            "micro.price_coupling",
                            "aggregated coupling needs correlated price noise",
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Purchase frequency of one product: preference times inventory times
/// consumer density.
pub fn purchase_rate(prod: &ProductState, psi_at_price: f64) -> Result<f64> {
    if psi_at_price < 0.0 {
        return Err(Error::domain("purchase_rate", "consumer density must be >= 0"));
    }
    Ok(prod.preference * prod.inventory * psi_at_price)
}

/// Advances the inventory by the excess of supply over sales. Returns the
/// new inventory and whether it had to be clamped at zero.
pub fn step_inventory(prod: &ProductState, dt: f64) -> (f64, bool) {
    let z = prod.inventory + prod.reproduction * prod.sales * dt;
    if z < 0.0 {
        (0.0, true)
    } else {
        (z, false)
    }
}

/// Advances the consumer density: new demand in, purchases out. Purchases at
/// density `psi` are `psi * <eta>_z * z_t`, so deviations from the stationary
/// point decay at rate `<eta>_z * z_t`.
pub fn step_consumers(state: &MarketState, p: &MarketParams, dt: f64) -> Result<f64> {
    if state.psi < 0.0 {
        return Err(Error::domain("step_consumers", "consumer density must be >= 0"));
    }
    let d = demand_rate(state.anchor_price.max(0.0), p.repurchase_rate, p)?;
    let outflow = state.psi * state.preference_z_mean() * state.total_inventory();
    Ok((state.psi + (d - outflow) * dt).max(0.0))
}

/// Stationary consumer density: purchases balance the demand rate.
pub fn stationary_consumers(state: &MarketState, p: &MarketParams) -> Result<f64> {
    let rate = state.preference_z_mean() * state.total_inventory();
    if !(rate > 0.0) {
        return Err(Error::Degenerate("no inventory to purchase from".into()));
    }
    Ok(demand_rate(state.anchor_price.max(0.0), p.repurchase_rate, p)? / rate)
}

/// Fitness of a product given the consumer density at its price.
pub fn product_fitness(prod: &ProductState, psi_at_price: f64) -> f64 {
    psi_at_price * prod.preference * prod.reproduction
}

/// Consumer density seen by a product priced at `price`.
pub fn consumers_at_price(psi: f64, price: f64, anchor: f64, p: &MarketParams) -> Result<f64> {
    let d_anchor = demand_rate(anchor.max(0.0), p.repurchase_rate, p)?;
    if d_anchor <= 0.0 {
        return Ok(0.0);
    }
    Ok(psi * demand_rate(price.max(0.0), p.repurchase_rate, p)? / d_anchor)
}

/// Sales-weighted mean of `values`.
pub fn sales_weighted_mean(sales: &[f64], values: &[f64]) -> f64 {
    let total: f64 = sales.iter().sum();
    sales.iter().zip(values).map(|(y, v)| y * v).sum::<f64>() / total
}

/// One replicator update `y_i += (g_i - <g>) y_i` where `g_i` is the growth
/// increment of the step and `<g>` its sales-weighted mean. The total is
/// conserved up to rounding.
pub fn replicator_update(sales: &mut [f64], increments: &[f64]) -> Result<()> {
    let total: f64 = sales.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("replicator_update", "total sales must be > 0"));
    }
    let mean = sales_weighted_mean(sales, increments);
    for (y, g) in sales.iter_mut().zip(increments) {
        *y += (g - mean) * *y;
    }
    Ok(())
}

/// Deterministic replicator step with fitness `f` over `dt`.
pub fn replicator_step(sales: &mut [f64], fitness: &[f64], dt: f64) -> Result<()> {
    let inc: Vec<f64> = fitness.iter().map(|f| f * dt).collect();
    replicator_update(sales, &inc)
}

/// Log growth rate between two sales values; `None` when either vanishes.
pub fn growth_rate(before: f64, after: f64) -> Option<f64> {
    (before > 0.0 && after > 0.0).then(|| (after / before).ln())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Price deviation update under the sign restoring force plus a noise increment.
pub fn price_fluctuation_step(dev: f64, noise: f64, restoring_strength: f64, dt: f64) -> f64 {
    dev - restoring_strength * sign(dev) * dt + noise
}

/// Largest `dt` allowed by the replicator stability rule.
pub fn stability_bound(sales: &[f64], fitness: &[f64]) -> f64 {
    let mean = sales_weighted_mean(sales, fitness);
    let spread = fitness.iter().map(|f| (f - mean).abs()).fold(0.0, f64::max);
    if spread > 0.0 {
        0.1 / spread
    } else {
        f64::INFINITY
    }
}

/// Relative fluctuation width as a function of the number of aggregated
/// activity samples, measured on one correlated stream.
#[derive(Debug, Clone)]
pub struct ActivityScaling {
    /// `(ln L, ln width)` on powers of two, width normalized to 1 at `L = 1`.
    table: Vec<(f64, f64)>,
}

impl ActivityScaling {
    pub fn measure(stream: &[f64]) -> Result<Self> {
        let n = stream.len();
        let mut table = Vec::new();
        let mut block = 1usize;
        while n / block >= 64 {
            let means: Vec<f64> = stream
                .chunks_exact(block)
                .map(|c| c.iter().sum::<f64>() / block as f64)
                .collect();
            let (_, var) = crate::stats::mean_var(&means);
            if !(var > 0.0) {
                return Err(Error::Degenerate("activity stream has zero variance".into()));
            }
            table.push(((block as f64).ln(), 0.5 * var.ln()));
            block *= 2;
        }
        if table.len() < 2 {
            return Err(Error::InsufficientData("activity stream too short".into()));
        }
        let base = table[0].1;
        for e in &mut table {
            e.1 -= base;
        }
        Ok(Self { table })
    }

    /// Width for `l` aggregated samples; log-linear interpolation, flat
    /// below one sample and extrapolated with the last slope above the table.
    pub fn width(&self, l: f64) -> f64 {
        let x = l.max(1.0).ln();
        let t = &self.table;
        let k = t.partition_point(|e| e.0 <= x).clamp(1, t.len() - 1);
        let (x0, y0) = t[k - 1];
        let (x1, y1) = t[k];
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp()
    }

    pub fn log_slope(&self) -> f64 {
        let xs: Vec<f64> = self.table.iter().map(|e| e.0).collect();
        let ys: Vec<f64> = self.table.iter().map(|e| e.1).collect();
        crate::stats::optim::linear_fit(&xs, &ys).slope
    }
}

/// Per-product auxiliary state of the engine.
#[derive(Debug, Clone)]
struct Lane {
    price_rng: SimRng,
    fitness_rng: SimRng,
    price_stream: Vec<f64>,
    fitness_stream: Vec<f64>,
    /// Unit-width price deviation; the product's deviation is this times its width.
    latent: f64,
    shock: f64,
    stockout: bool,
}

/// Largest number of pre-generated correlated values held in memory.
pub const MAX_STREAM_VALUES: usize = 50_000_000;

/// Stepper for the short-scale market. Each step runs a reduction phase over
/// shared aggregates followed by an independent per-product update.
pub struct MicroEngine {
    pub state: MarketState,
    params: MarketParams,
    cfg: MicroConfig,
    lanes: Vec<Lane>,
    activity: Option<ActivityScaling>,
    horizon: u64,
    step: u64,
    stockouts: u64,
}

impl MicroEngine {
    /// `horizon` bounds the steps for which correlated streams are generated.
    pub fn new(state: MarketState, params: MarketParams, cfg: MicroConfig, horizon: u64) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let activity = match (&cfg.price_coupling, &cfg.price_noise) {
            (PriceCoupling::Aggregated { stream_length, .. }, Some(spec)) => {
                let mut s = spec.clone();
                s.length = *stream_length;
                s.dt = 1.0;
                s.seed = derive_seed(spec.seed, crate::rng::streams::ACTIVITY);
                Some(ActivityScaling::measure(&generate_correlated(&s)?)?)
            }
            _ => None,
        };
        let mut engine = Self {
            state,
            params,
            cfg,
            lanes: Vec::new(),
            activity,
            horizon,
            step: 0,
            stockouts: 0,
        };
        for k in 0..engine.state.products.len() {
            engine.push_lane(k)?;
        }
        for k in 0..engine.state.products.len() {
            engine.lanes[k].latent = engine.state.products[k].price_dev;
        }
        Ok(engine)
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn config(&self) -> &MicroConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn stockouts(&self) -> u64 {
        self.stockouts
    }

    fn correlated_stream(&self, spec: Option<&NoiseSpec>, k: usize) -> Result<Vec<f64>> {
        let Some(s) = spec.filter(|s| s.kind == NoiseKind::Correlated) else {
            return Ok(Vec::new());
        };
        let len = self.horizon as usize;
        if len.saturating_mul(self.state.products.len().max(1)) > MAX_STREAM_VALUES {
            return Err(Error::param(
                "noise.length",
                format!("correlated streams for this run exceed {MAX_STREAM_VALUES} values"),
            ));
        }
        let mut s2 = s.clone();
        s2.length = len;
        s2.dt = self.cfg.dt;
        s2.seed = derive_seed(s.seed, k as u64);
        generate_correlated(&s2)
    }

    fn push_lane(&mut self, k: usize) -> Result<()> {
        let price_seed = self.cfg.price_noise.as_ref().map_or(0, |s| s.seed);
        let fitness_seed = self.cfg.fitness_noise.as_ref().map_or(0, |s| s.seed);
        // aggregated coupling drives the latent deviation with white noise
        let price_spec = match self.cfg.price_coupling {
            PriceCoupling::Aggregated { .. } => None,
            _ => self.cfg.price_noise.as_ref(),
        };
        let price_stream = self.correlated_stream(price_spec, k)?;
        let fitness_stream = self.correlated_stream(self.cfg.fitness_noise.as_ref(), k)?;
        self.lanes.push(Lane {
            price_rng: stream_rng(price_seed, k as u64),
            fitness_rng: stream_rng(fitness_seed, k as u64),
            price_stream,
            fitness_stream,
            latent: 0.0,
            shock: 0.0,
            stockout: false,
        });
        Ok(())
    }

    /// Adds a product created after construction (e.g. by attachment).
    pub fn add_product(&mut self, mut prod: ProductState) -> Result<()> {
        let k = self.state.products.len();
        prod.id = crate::market::ProductId(k as u64);
        prod.validate()?;
        self.state.products.push(prod);
        self.push_lane(k)
    }

    fn price_width(&self, sales: f64) -> f64 {
        width_for(&self.cfg.price_coupling, self.activity.as_ref(), sales)
    }

    /// Sets the consumer density to its stationary value.
    pub fn relax_consumers(&mut self) -> Result<()> {
        self.state.psi = stationary_consumers(&self.state, &self.params)?;
        Ok(())
    }

    pub fn snapshot(&mut self) -> Result<Snapshot> {
        self.state.recompute_aggregates()?;
        for firm in &mut self.state.firms {
            let products = &self.state.products;
            firm.product_ids.retain(|id| products[id.0 as usize].alive);
            firm.cash_cow = crate::firm::select_cash_cow(firm, products).ok();
        }
        Ok(Snapshot::of_market(self.step, &self.state))
    }

    /// Advances one short-time step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let step_idx = self.step as usize;
        let y_t = self.state.total_sales();
        if !(y_t > 0.0) {
            return Err(Error::Degenerate(format!("total sales vanished at step {}", self.step)));
        }
        let psi = step_consumers(&self.state, &self.params, dt)?;
        let anchor = self.state.anchor_price;
        let d_anchor = demand_rate(anchor.max(0.0), self.params.repurchase_rate, &self.params)?;

        let cfg = &self.cfg;
        let params = &self.params;
        let activity = self.activity.as_ref();
        let price_sd = cfg.price_noise.as_ref().map(|s| (2.0 * s.amplitude * dt).sqrt());
        let fitness_sd = cfg.fitness_noise.as_ref().map(|s| (2.0 * s.amplitude * dt).sqrt());

        // per-product price and fitness
        self.state
            .products
            .par_iter_mut()
            .zip(self.lanes.par_iter_mut())
            .with_min_len(256)
            .for_each(|(p, lane)| {
                if !p.alive {
                    return;
                }
                if let Some(sd) = price_sd {
                    let xi = if lane.price_stream.is_empty() {
                        sd * lane.price_rng.sample::<f64, _>(StandardNormal)
                    } else {
                        lane.price_stream[step_idx]
                    };
                    lane.latent = price_fluctuation_step(lane.latent, xi, cfg.restoring_strength, dt);
                    let w = width_for(&cfg.price_coupling, activity, p.sales);
                    p.price_dev = w * lane.latent;
                    p.price = anchor + p.price_dev;
                }
                let psi_i = match cfg.fitness_mode {
                    FitnessMode::Direct => psi,
                    FitnessMode::Decomposed => {
                        if d_anchor > 0.0 {
                            psi * demand_rate(p.price.max(0.0), params.repurchase_rate, params).unwrap_or(0.0) / d_anchor
                        } else {
                            0.0
                        }
                    }
                };
                p.fitness = product_fitness(p, psi_i);
                lane.shock = match fitness_sd {
                    Some(sd) if lane.fitness_stream.is_empty() => sd * lane.fitness_rng.sample::<f64, _>(StandardNormal),
                    Some(_) => lane.fitness_stream[step_idx],
                    None => 0.0,
                };
            });

        // reductions
        let mut sum_f = 0.0;
        let mut sum_g = 0.0;
        for (p, lane) in self.state.products.iter().zip(&self.lanes) {
            if p.alive {
                sum_f += p.fitness * p.sales;
                sum_g += (p.fitness * dt + lane.shock) * p.sales;
            }
        }
        let mean_f = sum_f / y_t;
        let mean_g = sum_g / y_t;
        if self.cfg.check_stability {
            let spread = self
                .state
                .live_products()
                .map(|p| (p.fitness - mean_f).abs())
                .fold(0.0, f64::max);
            if spread > 0.0 && dt > 0.1 / spread {
                return Err(Error::Stability { dt, bound: 0.1 / spread });
            }
        }

        // per-product replicator and inventory
        let floor = self.cfg.y_floor;
        self.state
            .products
            .par_iter_mut()
            .zip(self.lanes.par_iter_mut())
            .with_min_len(256)
            .for_each(|(p, lane)| {
                if !p.alive {
                    return;
                }
                let (z, out) = step_inventory(p, dt);
                p.inventory = z;
                lane.stockout = out;
                p.sales += (p.fitness * dt + lane.shock - mean_g) * p.sales;
                if !(p.sales >= floor) || p.sales <= 0.0 {
                    p.alive = false;
                    p.sales = 0.0;
                }
                p.supply = (1.0 + p.reproduction) * p.sales;
            });

        for (p, lane) in self.state.products.iter().zip(&self.lanes) {
            if lane.stockout {
                self.stockouts += 1;
            }
            for (name, v) in [
                ("sales", p.sales),
                ("inventory", p.inventory),
                ("price", p.price),
                ("fitness", p.fitness),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        quantity: name,
                        product: p.id.0,
                        step: self.step,
                    });
                }
            }
        }
        if !psi.is_finite() {
            return Err(Error::NonFinite {
                quantity: "consumers",
                product: u64::MAX,
                step: self.step,
            });
        }
        self.state.psi = psi;
        self.step += 1;
        self.state.tau += dt;
        self.state.t = self.state.epsilon * self.state.tau;
        Ok(())
    }

    /// Latent unit-width price deviation of product `k`.
    pub fn latent_deviation(&self, k: usize) -> f64 {
        self.lanes[k].latent
    }

    pub fn width_of(&self, sales: f64) -> f64 {
        self.price_width(sales)
    }
}

fn width_for(coupling: &PriceCoupling, activity: Option<&ActivityScaling>, sales: f64) -> f64 {
    match *coupling {
        PriceCoupling::Uniform => 1.0,
        PriceCoupling::Direct { beta, reference_size } => {
            if sales > 0.0 {
                (sales / reference_size).powf(-beta)
            } else {
                1.0
            }
        }
        PriceCoupling::Aggregated { activity_unit, .. } => {
            activity.map_or(1.0, |a| a.width(sales / activity_unit))
        }
    }
}

/// Runs `n_steps` short-time steps, recording a snapshot at the start and every
/// `record_every` steps. Seeds come from the noise specifications.
pub fn run_micro(state: MarketState, params: &MarketParams, cfg: &MicroConfig, n_steps: u64) -> Result<RunRecord> {
    let seed = cfg
        .price_noise
        .as_ref()
        .or(cfg.fitness_noise.as_ref())
        .map_or(0, |s| s.seed);
    let mut engine = MicroEngine::new(state, params.clone(), cfg.clone(), n_steps)?;
    let mut record = RunRecord::new(Provenance::new("", seed));
    record.snapshots.push(engine.snapshot()?);
    for _ in 0..n_steps {
        engine.step()?;
        if engine.steps_done() % cfg.record_every == 0 {
            record.snapshots.push(engine.snapshot()?);
        }
    }
    if n_steps % cfg.record_every != 0 {
        record.snapshots.push(engine.snapshot()?);
    }
    record.set_firms(&engine.state);
    if engine.stockouts() > 0 {
        record
            .diagnostics
            .push(format!("{} inventory stockouts clamped at zero", engine.stockouts()));
    }
    Ok(record)
}

/// Builds a market of `n` identical products owned one per firm.
pub fn uniform_market(
    n: usize,
    sales: f64,
    inventory: f64,
    preference: f64,
    reproduction: f64,
    anchor_price: f64,
    epsilon: f64,
) -> Result<MarketState> {
    use crate::market::{FirmId, FirmState, ProductId};
    let products = (0..n)
        .map(|k| ProductState::new(ProductId(k as u64), sales, inventory, anchor_price, preference, reproduction))
        .collect();
    let firms = (0..n)
        .map(|k| FirmState::new(FirmId(k as u64), vec![ProductId(k as u64)], 0.0))
        .collect();
    MarketState::new(products, firms, anchor_price, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::test_params;
    use crate::noise::NoiseSpec;
    use proptest::prelude::*;

    fn product(y: f64, z: f64, eta: f64, gamma: f64) -> ProductState {
        ProductState::new(crate::market::ProductId(0), y, z, 0.01, eta, gamma)
    }

    #[test]
    fn purchase_rate_examples() {
        assert_eq!(purchase_rate(&product(1.0, 0.5, 0.0, 0.0), 0.2).unwrap(), 0.0);
        assert_eq!(purchase_rate(&product(1.0, 0.0, 1.0, 0.0), 0.2).unwrap(), 0.0);
        assert_eq!(purchase_rate(&product(1.0, 0.5, 1.0, 0.0), 0.0).unwrap(), 0.0);
        assert!((purchase_rate(&product(1.0, 0.5, 1.0, 0.0), 0.2).unwrap() - 0.1).abs() < 1e-15);
        let a = purchase_rate(&product(1.0, 0.3, 1.0, 0.0), 0.2).unwrap();
        let b = purchase_rate(&product(1.0, 0.6, 1.0, 0.0), 0.2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn inventory_examples() {
        assert_eq!(step_inventory(&product(1.0, 0.5, 1.0, 0.0), 0.01).0, 0.5);
        let (z, _) = step_inventory(&product(1.0, 0.5, 1.0, 0.1), 0.01);
        assert!((z - 0.501).abs() < 1e-15);
        let (z, out) = step_inventory(&product(1.0, 0.001, 1.0, -1.0), 0.01);
        assert_eq!(z, 0.0);
        assert!(out);
    }

    #[test]
    fn inventory_aggregates_to_mean_reproduction() {
        let state = MarketState::new(
            vec![
                ProductState::new(crate::market::ProductId(0), 0.2, 1.0, 0.01, 1.0, 0.1),
                ProductState::new(crate::market::ProductId(1), 0.6, 1.0, 0.01, 1.0, 0.3),
            ],
            vec![],
            0.01,
            0.02,
        )
        .unwrap();
        let dt = 0.01;
        let dz: f64 = state.products.iter().map(|p| step_inventory(p, dt).0 - p.inventory).sum();
        let mean_gamma = state.sales_weighted(|p| p.reproduction);
        assert!((dz - mean_gamma * state.total_sales() * dt).abs() < 1e-15);
    }

    fn consumer_market() -> (MarketState, MarketParams) {
        let p = test_params();
        let mut s = uniform_market(3, 0.1, 2.0, 0.5, 0.0, p.natural_price, p.epsilon).unwrap();
        s.psi = stationary_consumers(&s, &p).unwrap();
        (s, p)
    }

    #[test]
    fn consumers_stationary_point_is_fixed() {
        let (s, p) = consumer_market();
        let next = step_consumers(&s, &p, 0.01).unwrap();
        assert!((next - s.psi).abs() < 1e-15);
    }

    #[test]
    fn consumer_deviation_decays_exponentially() {
        let (mut s, p) = consumer_market();
        let psi0 = s.psi;
        let delta0 = 0.05;
        s.psi += delta0;
        let rate = s.preference_z_mean() * s.total_inventory();
        let dt = 1e-3;
        let tau = 1.0;
        let n = (tau / dt) as usize;
        for _ in 0..n {
            s.psi = step_consumers(&s, &p, dt).unwrap();
        }
        let expected = delta0 * (-rate * tau).exp();
        let got = s.psi - psi0;
        // Euler error is O(rate * dt) relative
        assert!((got - expected).abs() / expected < 1e-4 * (1.0 + rate * rate * 1e3), "{got} vs {expected}");
    }

    #[test]
    fn empty_shelves_stop_relaxation() {
        let (mut s, p) = consumer_market();
        for prod in &mut s.products {
            prod.inventory = 0.0;
        }
        let d = demand_rate(s.anchor_price, p.repurchase_rate, &p).unwrap();
        let next = step_consumers(&s, &p, 0.1).unwrap();
        assert!((next - (s.psi + d * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(product_fitness(&product(1.0, 1.0, 1.0, 0.0), 0.2), 0.0);
        assert!((product_fitness(&product(1.0, 1.0, 1.0, 0.1), 0.2) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn replicator_examples() {
        let mut y = vec![0.3, 0.7];
        replicator_step(&mut y, &[0.4, 0.4], 0.5).unwrap();
        assert_eq!(y, vec![0.3, 0.7]);

        let mut y = vec![0.5, 0.5];
        replicator_step(&mut y, &[0.1, 0.0], 1.0).unwrap();
        assert!((y[0] - 0.525).abs() < 1e-15 && (y[1] - 0.475).abs() < 1e-15);
        assert!(replicator_step(&mut [0.0, 0.0], &[0.1, 0.0], 1.0).is_err());
    }

    #[test]
    fn replicator_follows_logistic_share() {
        // constant fitness gap: share x obeys dx/dt = df x (1 - x)
        let (df, dt, t_end) = (0.5, 1e-4, 10.0);
        let mut y = vec![0.1, 0.9];
        let n = (t_end / dt) as usize;
        for k in 1..=n {
            replicator_step(&mut y, &[df, 0.0], dt).unwrap();
            if k % 10_000 == 0 {
                let t = k as f64 * dt;
                let x0: f64 = 0.1;
                let logistic = x0 * (df * t).exp() / (1.0 - x0 + x0 * (df * t).exp());
                let share = y[0] / (y[0] + y[1]);
                assert!((share - logistic).abs() / logistic < 1e-3, "t={t}: {share} vs {logistic}");
            }
        }
    }

    #[test]
    fn growth_rate_examples() {
        assert_eq!(growth_rate(2.0, 2.0), Some(0.0));
        assert!((growth_rate(1.0, 2.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(growth_rate(0.0, 1.0), None);
    }

    #[test]
    fn price_step_examples() {
        assert!(price_fluctuation_step(0.3, 0.0, 1.0, 0.01) < 0.3);
        assert_eq!(price_fluctuation_step(0.0, 0.0, 1.0, 0.01), 0.0);
        assert!(price_fluctuation_step(-0.3, 0.0, 1.0, 0.01) > -0.3);
    }

    fn gibrat_setup(n: usize, seed: u64) -> (MarketState, MarketParams, MicroConfig) {
        let p = test_params();
        let mut s = uniform_market(n, 1.0 / n as f64, 1.0, 1.0, 0.0, p.natural_price, p.epsilon).unwrap();
        s.psi = stationary_consumers(&s, &p).unwrap();
        let mut cfg = MicroConfig::new(1.0, 0.0);
        cfg.fitness_noise = Some(NoiseSpec::white(5e-5, 1.0, 0, seed));
        cfg.record_every = 50;
        (s, p, cfg)
    }

    #[test]
    fn run_with_zero_steps_has_initial_snapshot_only() {
        let (s, p, cfg) = gibrat_setup(10, 1);
        let r = run_micro(s, &p, &cfg, 0).unwrap();
        assert_eq!(r.snapshots.len(), 1);
    }

    #[test]
    fn noiseless_equal_fitness_is_fixed_point() {
        let (s, p, mut cfg) = gibrat_setup(10, 1);
        cfg.fitness_noise = None;
        let before = s.clone();
        let r = run_micro(s, &p, &cfg, 200).unwrap();
        let last = r.final_snapshot().unwrap();
        for (a, b) in before.products.iter().zip(&last.products) {
            assert_eq!(a.sales, b.sales);
            assert_eq!(a.inventory, b.inventory);
            assert_eq!(a.price, b.price);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (s, p, mut cfg) = gibrat_setup(500, 9);
        cfg.price_noise = Some(NoiseSpec::white(1e-6, 1.0, 0, 10));
        let a = run_micro(s.clone(), &p, &cfg, 300).unwrap();
        let b = run_micro(s, &p, &cfg, 300).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn total_sales_conserved_per_step() {
        let (s, p, mut cfg) = gibrat_setup(1000, 4);
        cfg.fitness_noise = Some(NoiseSpec::white(1e-4, 1.0, 0, 4));
        let mut e = MicroEngine::new(s, p, cfg, 100).unwrap();
        for _ in 0..100 {
            let before = e.state.total_sales();
            e.step().unwrap();
            let after = e.state.total_sales();
            assert!((after - before).abs() / before < 1e-10);
        }
    }

    #[test]
    fn log_growth_drift_offsets_half_variance() {
        let (s, p, cfg) = gibrat_setup(5000, 5);
        let r = run_micro(s, &p, &cfg, 100).unwrap();
        let first = &r.snapshots[0];
        let last = r.final_snapshot().unwrap();
        let rates: Vec<f64> = first
            .products
            .iter()
            .zip(&last.products)
            .filter_map(|(a, b)| growth_rate(a.sales, b.sales))
            .collect();
        // total sales are conserved, so the mean log growth sits at -Var/2
        let (m, v) = crate::stats::mean_var(&rates);
        assert!((m + 0.5 * v).abs() < 3.0 * (v / rates.len() as f64).sqrt(), "{m} {v}");
    }

    #[test]
    fn stability_violation_aborts() {
        let p = test_params();
        let mut s = uniform_market(2, 0.5, 1.0, 1.0, 0.0, p.natural_price, p.epsilon).unwrap();
        s.products[0].reproduction = 5.0;
        s.psi = 10.0;
        let cfg = MicroConfig::new(1.0, 0.0);
        assert!(matches!(run_micro(s, &p, &cfg, 5), Err(Error::Stability { .. })));
    }

    #[test]
    fn mean_reversion_of_prices() {
        let p = test_params();
        let mut s = uniform_market(50, 0.02, 1.0, 1.0, 0.0, 0.2, p.epsilon).unwrap();
        s.psi = stationary_consumers(&s, &p).unwrap();
        let mut cfg = MicroConfig::new(0.01, 1.0);
        cfg.price_noise = Some(NoiseSpec::white(1.0, 1.0, 0, 21));
        cfg.record_every = 200;
        let r = run_micro(s, &p, &cfg, 40_000).unwrap();
        let devs: Vec<f64> = r.snapshots[10..]
            .iter()
            .flat_map(|sn| sn.products.iter().map(|q| q.price_dev))
            .collect();
        let (m, v) = crate::stats::mean_var(&devs);
        assert!(m.abs() < 4.0 * (v / devs.len() as f64).sqrt());
    }

    #[test]
    fn activity_scaling_of_white_stream_has_half_slope() {
        let xs = crate::noise::generate_white(&NoiseSpec::white(0.5, 1.0, 1 << 16, 3)).unwrap();
        let a = ActivityScaling::measure(&xs).unwrap();
        assert!((a.log_slope() + 0.5).abs() < 0.05);
        assert_eq!(a.width(0.5), 1.0);
    }

    proptest! {
        #[test]
        fn replicator_conserves_total(
            ys in proptest::collection::vec(0.01f64..10.0, 2..50),
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from_seed(seed);
            let fs: Vec<f64> = ys.iter().map(|_| rng.random::<f64>() * 0.1).collect();
            let mut y = ys.clone();
            let before: f64 = y.iter().sum();
            replicator_step(&mut y, &fs, 0.5).unwrap();
            let after: f64 = y.iter().sum();
            prop_assert!((after - before).abs() <= 1e-12 * before);
        }
    }
}
