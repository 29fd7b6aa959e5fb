//! Evolutionary market model: product-level replicator dynamics, firm size
//! growth, price fluctuations, life-cycle evolution and the statistical fits
//! used to compare simulated distributions with empirical ones.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod firm;
pub mod lifecycle;
pub mod market;
pub mod micro;
pub mod noise;
pub mod pipeline;
pub mod presets;
pub mod record;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod tables;

pub use error::{Error, Result};
pub use market::{CostCoefficients, FirmId, FirmState, MarketParams, MarketState, ProductId, ProductState};
pub use micro::{FitnessMode, MicroConfig, MicroEngine, PriceCoupling};
pub use noise::{NoiseKind, NoiseSpec};
pub use record::{Provenance, RunRecord, Snapshot};
pub use stats::{FitFamily, FitOptions, FitResult};
pub use pipeline::{run_scenario, SeedRun};
pub use presets::{preset, preset_names};
pub use scenario::{load_scenario, Analysis, Scenario};
pub use tables::{emit_tables, verify_outputs, write_outputs};
