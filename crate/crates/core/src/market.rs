//! Static market relations and the domain records shared by every engine.
//!
//! All prices are real prices (nominal price divided by mean income); the
//! nominal value only appears at the output boundary via [`MarketParams::nominal`].
//! Densities (sales, supply, inventory, consumers) are continuous quantities
//! scaled by the market potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global constants of one consumer-goods market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Number of agents interested in the good.
    pub market_potential: f64,
    /// Fraction of the potential belonging to the upper income class.
    pub upper_share: f64,
    /// Mean income of the lower class, currency per year.
    pub mean_income: f64,
    /// Minimum mean real price approached under competition.
    pub natural_price: f64,
    /// Width of the demand curve in real-price units.
    pub demand_width: f64,
    /// Repurchase rate per short time unit.
    pub repurchase_rate: f64,
    /// Ratio of short to long time scale.
    pub epsilon: f64,
    /// Multiple-purchase rate on the long scale.
    pub multiple_purchase_rate: f64,
    /// Fraction of earlier sales that return as replacement purchases.
    pub replacement_fraction: f64,
    /// Mean product lifetime in long time units.
    pub product_lifetime: f64,
    /// Mean cost-to-price ratio of products.
    pub alpha_mean: f64,
}

impl MarketParams {
    pub fn lower_share(&self) -> f64 {
        1.0 - self.upper_share
    }

    pub fn nominal(&self, real_price: f64) -> f64 {
        real_price * self.mean_income
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("market_potential", self.market_potential),
            ("upper_share", self.upper_share),
            ("mean_income", self.mean_income),
            ("natural_price", self.natural_price),
            ("demand_width", self.demand_width),
            ("repurchase_rate", self.repurchase_rate),
            ("epsilon", self.epsilon),
            ("multiple_purchase_rate", self.multiple_purchase_rate),
            ("replacement_fraction", self.replacement_fraction),
            ("product_lifetime", self.product_lifetime),
            ("alpha_mean", self.alpha_mean),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.market_potential <= 0.0 {
            return Err(Error::param("market_potential", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.upper_share) {
            return Err(Error::param("upper_share", "upper_share out of [0,1]"));
        }
        if self.mean_income <= 0.0 {
            return Err(Error::param("mean_income", "must be positive"));
        }
        if self.natural_price < 0.0 {
            return Err(Error::param("natural_price", "must be non-negative"));
        }
        if self.demand_width <= 0.0 {
            return Err(Error::param("demand_width", "must be positive"));
        }
        if self.repurchase_rate < 0.0 {
            return Err(Error::param("repurchase_rate", "must be non-negative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(Error::param("epsilon", "must lie in (0, 0.1)"));
        }
        if self.multiple_purchase_rate < 0.0 {
            return Err(Error::param("multiple_purchase_rate", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.replacement_fraction) {
            return Err(Error::param("replacement_fraction", "out of [0,1]"));
        }
        if self.product_lifetime <= 0.0 {
            return Err(Error::param("product_lifetime", "must be positive"));
        }
        if !(self.alpha_mean > 0.0 && self.alpha_mean <= 1.0) {
            return Err(Error::param("alpha_mean", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Second-order cost expansion of one business unit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub fixed: f64,
    pub linear: f64,
    pub quadratic: f64,
}

impl CostCoefficients {
    pub fn new(fixed: f64, linear: f64, quadratic: f64) -> Result<Self> {
        let c = Self {
            fixed,
            linear,
            quadratic,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fixed", self.fixed),
            ("linear", self.linear),
            ("quadratic", self.quadratic),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("costs.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProductId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FirmId(pub u64);

/// One product (business unit, brand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    pub id: ProductId,
    /// Unit sales density.
    pub sales: f64,
    /// Supply density, `(1 + reproduction) * sales`.
    pub supply: f64,
    /// Inventory density.
    pub inventory: f64,
    /// Real price.
    pub price: f64,
    /// Deviation of the price from the market anchor price.
    pub price_dev: f64,
    /// Purchase-success rate.
    pub preference: f64,
    /// Relative excess of supply over sales.
    pub reproduction: f64,
    pub costs: CostCoefficients,
    /// Cached fitness of the last tick.
    pub fitness: f64,
    pub alive: bool,
}

impl ProductState {
    pub fn new(id: ProductId, sales: f64, inventory: f64, price: f64, preference: f64, reproduction: f64) -> Self {
        Self {
            id,
            sales,
            supply: (1.0 + reproduction) * sales,
            inventory,
            price,
            price_dev: 0.0,
            preference,
            reproduction,
            costs: CostCoefficients::default(),
            fitness: 0.0,
            alive: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sales >= 0.0) {
            return Err(Error::param(format!("product {}.sales", self.id.0), "must be >= 0"));
        }
        if !(self.inventory >= 0.0) {
            return Err(Error::param(format!("product {}.inventory", self.id.0), "must be >= 0"));
        }
        if !(self.preference > 0.0) {
            return Err(Error::param(format!("product {}.preference", self.id.0), "must be > 0"));
        }
        self.costs.validate()
    }

    /// Whether the price covers the unit cost at the current supply.
    pub fn is_profitable(&self) -> bool {
        match unit_cost(self.supply, &self.costs) {
            Ok(c) => self.price > c,
            Err(_) => false,
        }
    }
}

/// A firm: a set of owned products plus its attachment rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmState {
    pub id: FirmId,
    pub product_ids: Vec<ProductId>,
    /// Aggregate sales of the owned products.
    pub sales: f64,
    pub attachment_rate: f64,
    pub cash_cow: Option<ProductId>,
    pub active: bool,
}

impl FirmState {
    pub fn new(id: FirmId, product_ids: Vec<ProductId>, attachment_rate: f64) -> Self {
        Self {
            id,
            product_ids,
            sales: 0.0,
            attachment_rate,
            cash_cow: None,
            active: true,
        }
    }
}

/// Full short-scale market state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Products indexed by id: `products[k].id == ProductId(k)`.
    pub products: Vec<ProductState>,
    pub firms: Vec<FirmState>,
    /// Density of potential consumers.
    pub psi: f64,
    /// Sales-weighted mean real price, recomputed from the products.
    pub mean_price: f64,
    /// Reference price around which product prices fluctuate; moves only on
    /// the long scale.
    pub anchor_price: f64,
    /// Short-time counter.
    pub tau: f64,
    /// Long time, `epsilon * tau`.
    pub t: f64,
    pub epsilon: f64,
}

impl MarketState {
    pub fn new(products: Vec<ProductState>, firms: Vec<FirmState>, anchor_price: f64, epsilon: f64) -> Result<Self> {
        for (k, p) in products.iter().enumerate() {
            if p.id != ProductId(k as u64) {
                return Err(Error::Consistency(format!(
                    "product at position {k} carries id {}",
                    p.id.0
                )));
            }
            p.validate()?;
        }
        let mut state = Self {
            products,
            firms,
            psi: 0.0,
            mean_price: anchor_price,
            anchor_price,
            tau: 0.0,
            t: 0.0,
            epsilon,
        };
        state.recompute_aggregates()?;
        Ok(state)
    }

    pub fn live_products(&self) -> impl Iterator<Item = &ProductState> {
        self.products.iter().filter(|p| p.alive)
    }

    pub fn n_live(&self) -> usize {
        self.live_products().count()
    }

    pub fn total_sales(&self) -> f64 {
        self.live_products().map(|p| p.sales).sum()
    }

    pub fn total_inventory(&self) -> f64 {
        self.live_products().map(|p| p.inventory).sum()
    }

    /// Inventory-weighted mean preference.
    pub fn preference_z_mean(&self) -> f64 {
        let zt = self.total_inventory();
        if zt <= 0.0 {
            return 0.0;
        }
        self.live_products().map(|p| p.preference * p.inventory).sum::<f64>() / zt
    }

    /// Sales-weighted mean of `f` over live products.
    pub fn sales_weighted(&self, f: impl Fn(&ProductState) -> f64) -> f64 {
        let yt = self.total_sales();
        if yt <= 0.0 {
            return 0.0;
        }
        self.live_products().map(|p| p.sales * f(p)).sum::<f64>() / yt
    }

    /// Sales-weighted price variance.
    pub fn price_variance(&self) -> f64 {
        let m = self.sales_weighted(|p| p.price);
        self.sales_weighted(|p| (p.price - m) * (p.price - m))
    }

    pub fn firm_count(&self) -> usize {
        self.firms.iter().filter(|f| f.active).count()
    }

    /// Recomputes the mean price and all firm sales from scratch.
    pub fn recompute_aggregates(&mut self) -> Result<()> {
        let yt = self.total_sales();
        if yt > 0.0 {
            self.mean_price = self.sales_weighted(|p| p.price);
        }
        for k in 0..self.firms.len() {
            let x = crate::firm::aggregate_firm_sales(&self.firms[k], &self.products)?;
            let firm = &mut self.firms[k];
            firm.sales = x;
            firm.active = firm.product_ids.iter().any(|id| self.products[id.0 as usize].alive);
        }
        Ok(())
    }

    pub fn product(&self, id: ProductId) -> Result<&ProductState> {
        self.products
            .get(id.0 as usize)
            .ok_or_else(|| Error::Consistency(format!("dangling product id {}", id.0)))
    }
}

/// Cost per unit at supply density `s`.
pub fn unit_cost(s: f64, c: &CostCoefficients) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::domain("unit_cost", format!("supply must be > 0, got {s}")));
    }
    Ok(c.fixed / s + c.linear + c.quadratic * s)
}

/// Output density at which unit cost is minimal.
pub fn capacity_limit(c: &CostCoefficients) -> Result<f64> {
    if c.quadratic <= 0.0 {
        return Err(Error::domain("capacity_limit", "unbounded: quadratic cost coefficient is zero"));
    }
    Ok((c.fixed / c.quadratic).sqrt())
}

/// Boltzmann-Gibbs density of the lower-class income.
pub fn income_pdf(h: f64, mean_income: f64) -> Result<f64> {
    if h < 0.0 {
        return Err(Error::domain("income_pdf", "income must be non-negative"));
    }
    if !(mean_income > 0.0) {
        return Err(Error::domain("income_pdf", "mean income must be positive"));
    }
    Ok((-h / mean_income).exp() / mean_income)
}

/// Inverse-CDF draw from the income distribution given a uniform `u` in [0, 1).
pub fn income_quantile(u: f64, mean_income: f64) -> f64 {
    -mean_income * (1.0 - u).ln()
}

/// Density of agents able to afford the good at mean price `mean_price`.
///
/// Clamped to the full potential at or below the natural price.
pub fn market_volume(mean_price: f64, p: &MarketParams) -> Result<f64> {
    if mean_price < 0.0 {
        return Err(Error::domain("market_volume", "mean price must be non-negative"));
    }
    let excess = (mean_price - p.natural_price).max(0.0);
    let width2 = p.demand_width * p.demand_width;
    Ok(p.lower_share() * (-excess * excess / (2.0 * width2)).exp() + p.upper_share)
}

/// Derivative of [`market_volume`] with respect to the mean price.
pub fn market_volume_slope(mean_price: f64, p: &MarketParams) -> f64 {
    let excess = (mean_price - p.natural_price).max(0.0);
    let width2 = p.demand_width * p.demand_width;
    -p.lower_share() * excess / width2 * (-excess * excess / (2.0 * width2)).exp()
}

/// Short-scale (repurchase) demand rate.
pub fn demand_rate(mean_price: f64, q: f64, p: &MarketParams) -> Result<f64> {
    if q < 0.0 {
        return Err(Error::domain("demand_rate", "repurchase rate must be non-negative"));
    }
    Ok(q * market_volume(mean_price, p)?)
}

/// Second-order expansion of [`demand_rate`] around the natural price.
/// Diagnostic only; the simulator always uses the exact form.
pub fn demand_rate_quadratic(mean_price: f64, q: f64, p: &MarketParams) -> f64 {
    let dx = mean_price - p.natural_price;
    q * (1.0 - p.lower_share() * dx * dx / (2.0 * p.demand_width * p.demand_width))
}

#[cfg(test)]
pub(crate) fn test_params() -> MarketParams {
    MarketParams {
        market_potential: 1.0e6,
        upper_share: 0.02,
        mean_income: 30_000.0,
        natural_price: 0.01,
        demand_width: 0.05,
        repurchase_rate: 0.1,
        epsilon: 0.02,
        multiple_purchase_rate: 0.05,
        replacement_fraction: 0.8,
        product_lifetime: 10.0,
        alpha_mean: 0.8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_cost_examples() {
        assert_eq!(unit_cost(1.0, &CostCoefficients::new(1.0, 0.0, 1.0).unwrap()).unwrap(), 2.0);
        assert_eq!(unit_cost(2.0, &CostCoefficients::new(4.0, 3.0, 1.0).unwrap()).unwrap(), 7.0);
        let flat = CostCoefficients::new(0.0, 5.0, 0.0).unwrap();
        for s in [1e-6, 0.3, 17.0] {
            assert_eq!(unit_cost(s, &flat).unwrap(), 5.0);
        }
        assert!(unit_cost(0.0, &flat).is_err());
        assert!(unit_cost(-1.0, &flat).is_err());
    }

    #[test]
    fn negative_cost_coefficients_rejected() {
        assert!(CostCoefficients::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn capacity_limit_examples() {
        assert_eq!(capacity_limit(&CostCoefficients::new(4.0, 0.0, 1.0).unwrap()).unwrap(), 2.0);
        assert_eq!(capacity_limit(&CostCoefficients::new(1.0, 0.0, 1.0).unwrap()).unwrap(), 1.0);
        let c = CostCoefficients::new(9.0, 0.0, 4.0).unwrap();
        let s0 = capacity_limit(&c).unwrap();
        assert_eq!(s0, 1.5);
        // grid scan around the returned optimum
        let at = unit_cost(s0, &c).unwrap();
        for k in -20..=20 {
            let s = s0 + 0.01 * k as f64;
            assert!(unit_cost(s, &c).unwrap() >= at);
        }
        assert!(unit_cost(1.6, &c).unwrap() > at && unit_cost(1.4, &c).unwrap() > at);
        assert!(capacity_limit(&CostCoefficients::new(1.0, 1.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn income_pdf_examples() {
        assert_eq!(income_pdf(0.0, 1.0).unwrap(), 1.0);
        let i = 2.5;
        assert!((income_pdf(i, i).unwrap() - (-1.0f64).exp() / i).abs() < 1e-15);
        assert!(income_pdf(-1.0, 1.0).is_err());
    }

    #[test]
    fn income_pdf_integrates_to_one() {
        // composite Simpson on [0, 60 I]; the remaining tail is e^-60
        let i = 3.0;
        let n = 200_000;
        let h = 60.0 * i / n as f64;
        let mut s = income_pdf(0.0, i).unwrap() + income_pdf(60.0 * i, i).unwrap();
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * income_pdf(k as f64 * h, i).unwrap();
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn income_inverse_cdf_mean() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(11);
        let i = 4.0;
        let n = 1_000_000;
        let mean = (0..n).map(|_| income_quantile(rng.random::<f64>(), i)).sum::<f64>() / n as f64;
        assert!((mean - i).abs() / i < 0.01);
    }

    #[test]
    fn market_volume_examples() {
        let p = test_params();
        assert_eq!(market_volume(p.natural_price, &p).unwrap(), 1.0);
        assert_eq!(market_volume(0.0, &p).unwrap(), 1.0);
        assert!((market_volume(1e6, &p).unwrap() - p.upper_share).abs() < 1e-15);
        let half = p.natural_price + p.demand_width * (2.0 * 2f64.ln()).sqrt();
        let v = market_volume(half, &p).unwrap();
        assert!((v - (p.lower_share() / 2.0 + p.upper_share)).abs() < 1e-14);
        assert!(market_volume(-0.1, &p).is_err());
    }

    #[test]
    fn demand_examples() {
        let p = test_params();
        assert!((demand_rate(p.natural_price, 0.1, &p).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(demand_rate(0.3, 0.0, &p).unwrap(), 0.0);
        assert!(demand_rate(0.3, -1.0, &p).is_err());
        for k in 0..=20 {
            let mu = p.natural_price + 0.1 * p.demand_width * k as f64 / 20.0;
            let exact = demand_rate(mu, 0.1, &p).unwrap();
            let approx = demand_rate_quadratic(mu, 0.1, &p);
            assert!((exact - approx).abs() / exact < 0.01);
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let p = test_params();
        for mu in [0.02, 0.05, 0.1] {
            let h = 1e-7;
            let fd = (market_volume(mu + h, &p).unwrap() - market_volume(mu - h, &p).unwrap()) / (2.0 * h);
            assert!((fd - market_volume_slope(mu, &p)).abs() < 1e-6);
        }
    }

    #[test]
    fn upper_share_validation_message() {
        let mut p = test_params();
        p.upper_share = 1.5;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("upper_share out of [0,1]"), "{err}");
        let mut p = test_params();
        p.epsilon = 0.5;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn capacity_limit_minimizes_unit_cost(
            c0 in 0.01f64..100.0, c1 in 0.0f64..10.0, c2 in 0.01f64..100.0, s in 1e-3f64..1e3
        ) {
            let c = CostCoefficients::new(c0, c1, c2).unwrap();
            let s0 = capacity_limit(&c).unwrap();
            prop_assert!(unit_cost(s0, &c).unwrap() <= unit_cost(s, &c).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn market_volume_non_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = test_params();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(market_volume(lo, &p).unwrap() >= market_volume(hi, &p).unwrap());
        }
    }

    #[test]
    fn market_volume_continuous_at_natural_price() {
        let p = test_params();
        let left = market_volume(p.natural_price - 1e-9, &p).unwrap();
        let right = market_volume(p.natural_price + 1e-9, &p).unwrap();
        assert!((left - right).abs() < 1e-12);
    }
}
