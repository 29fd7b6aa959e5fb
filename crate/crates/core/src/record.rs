//! Persisted run output: time-indexed snapshots plus provenance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::market::{FirmId, MarketState, ProductId};
use crate::stats::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSnapshot {
    pub id: ProductId,
    pub sales: f64,
    pub inventory: f64,
    pub price: f64,
    pub price_dev: f64,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmSnapshot {
    pub id: FirmId,
    pub sales: f64,
    pub n_products: usize,
    pub cash_cow: Option<ProductId>,
}

/// Market-wide observables at one instant. Prices are real prices; money
/// quantities are per unit market potential unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub total_sales: f64,
    pub mean_price: f64,
    pub consumers: f64,
    pub n_products: f64,
    pub n_firms: f64,
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
    /// Pipeline-specific extra columns.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    /// Short time.
    pub tau: f64,
    /// Long time.
    pub t: f64,
    pub aggregate: Aggregates,
    pub products: Vec<ProductSnapshot>,
}

impl Snapshot {
    pub fn of_market(step: u64, state: &MarketState) -> Self {
        let products: Vec<ProductSnapshot> = state
            .live_products()
            .map(|p| ProductSnapshot {
                id: p.id,
                sales: p.sales,
                inventory: p.inventory,
                price: p.price,
                price_dev: p.price_dev,
                fitness: p.fitness,
            })
            .collect();
        let revenue: f64 = state.live_products().map(|p| p.price * p.sales).sum();
        let cost: f64 = state
            .live_products()
            .filter_map(|p| crate::market::unit_cost(p.supply, &p.costs).ok().map(|c| c * p.sales))
            .sum();
        Self {
            step,
            tau: state.tau,
            t: state.t,
            aggregate: Aggregates {
                total_sales: state.total_sales(),
                mean_price: state.mean_price,
                consumers: state.psi,
                n_products: products.len() as f64,
                n_firms: state.firm_count() as f64,
                revenue,
                cost,
                profit: revenue - cost,
                extra: BTreeMap::new(),
            },
            products,
        }
    }
}

/// A named fit attached to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub label: String,
    pub result: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(scenario_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            scenario_hash: scenario_hash.into(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub provenance: Provenance,
    pub snapshots: Vec<Snapshot>,
    /// Firm cross-section at the final snapshot.
    pub firms: Vec<FirmSnapshot>,
    pub fits: Vec<FitReport>,
    /// Scalar results (exponents, ratios) keyed by name.
    pub metrics: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
}

impl RunRecord {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            snapshots: Vec::new(),
            firms: Vec::new(),
            fits: Vec::new(),
            metrics: BTreeMap::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Whether snapshot times strictly increase.
    pub fn is_time_ordered(&self) -> bool {
        self.snapshots.windows(2).all(|w| w[1].tau > w[0].tau || w[1].t > w[0].t)
    }

    pub fn set_firms(&mut self, state: &MarketState) {
        self.firms = state
            .firms
            .iter()
            .filter(|f| f.active)
            .map(|f| FirmSnapshot {
                id: f.id,
                sales: f.sales,
                n_products: f.product_ids.len(),
                cash_cow: f.cash_cow,
            })
            .collect();
    }
}
