//! Executes the analyses of a scenario, one independent run per seed.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::firm::{run_sde_ensemble, stationary_tail_exponent};
use crate::lifecycle::{
    cumulative, fit_exponential, henderson_fit, integrate_coupled, integrate_mean_price, learning_curve,
    local_maxima, market_size, mean_price, nominal_revenue, total_sales, gompertz_adopters, SizeRegime,
};
use crate::market::{FirmId, FirmState, MarketState, ProductId, ProductState};
use crate::micro::{run_micro, MicroConfig, MicroEngine};
use crate::record::{Aggregates, FirmSnapshot, FitReport, Provenance, RunRecord, Snapshot};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::scenario::{Analysis, InitialMarket, Scenario};
use crate::stats::fits::subbotin_truncated_loglik;
use crate::stats::optim::linear_fit;
use crate::stats::{
    excess_kurtosis, fit_gaussian, fit_laplace, fit_lognormal, fit_pareto_tail, fit_scale_mixture, fit_subbotin,
    mean_var, pearson, size_variance_regression, FitOptions, FitResult, GofMethod,
};

/// Outcome of one seed (and sweep point) of a scenario.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Sweep label such as `attachment.rate=0.5`.
    pub variant: Option<String>,
    pub outcome: Result<RunRecord>,
}

impl SeedRun {
    /// Directory name of this run inside a scenario output directory.
    pub fn dir_name(&self) -> String {
        match &self.variant {
            None => format!("seed-{}", self.seed),
            Some(v) => format!("seed-{}-{}", self.seed, v.replace(['=', '.', '/'], "_")),
        }
    }
}

/// Runs every seed and sweep point in parallel. A failing run is reported in
/// its own [`SeedRun`] and does not stop the others.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<SeedRun>> {
    scenario.validate()?;
    let hash = scenario.hash()?;
    let variants = scenario.variants()?;
    let jobs: Vec<(u64, Option<String>, Scenario)> = scenario
        .seeds
        .iter()
        .flat_map(|&seed| variants.iter().map(move |(label, s)| (seed, label.clone(), s.clone())))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(seed, variant, s)| SeedRun {
            seed,
            outcome: run_seed(&s, seed, &hash),
            variant,
        })
        .collect())
}

fn fit_options(scenario: &Scenario, seed: u64) -> FitOptions {
    let resamples = scenario.fitting.bootstrap_resamples;
    FitOptions {
        gof: if resamples == 0 {
            GofMethod::Asymptotic
        } else {
            GofMethod::Bootstrap {
                resamples,
                seed: derive_seed(seed, streams::BOOTSTRAP),
            }
        },
    }
}

fn push_fit(record: &mut RunRecord, label: &str, result: Result<FitResult>) {
    match result {
        Ok(r) => record.fits.push(FitReport {
            label: label.to_string(),
            result: r,
        }),
        Err(e) => record.diagnostics.push(format!("{label}: {e}")),
    }
}

/// Runs all analyses of `scenario` for one seed. Sweeps must already be
/// expanded; `hash` identifies the scenario file in the provenance.
pub fn run_seed(scenario: &Scenario, seed: u64, hash: &str) -> Result<RunRecord> {
    let mut record = RunRecord::new(Provenance::new(hash, seed));
    let opts = fit_options(scenario, seed);
    if scenario.outputs.iter().any(|a| a.uses_micro()) {
        let micro = run_micro_stage(scenario, seed)?;
        record.snapshots = micro.snapshots;
        record.firms = micro.firms;
        record.diagnostics.extend(micro.diagnostics);
    }
    let mut outputs = scenario.outputs.clone();
    outputs.sort();
    outputs.dedup();
    for analysis in outputs {
        match analysis {
            Analysis::MicroRun => {}
            Analysis::GibratLognormal => gibrat(&mut record, &opts),
            Analysis::LaplacePrice => laplace_price(&mut record, scenario, &opts),
            Analysis::SizeVariance => size_variance(&mut record, scenario)?,
            Analysis::ProfitInvariant => profit(&mut record, scenario, seed),
            Analysis::ParetoTail => pareto(&mut record, scenario, seed, &opts)?,
            Analysis::GrowthMixture => growth_mixture(&mut record, scenario, seed, &opts)?,
            Analysis::Lifecycle => lifecycle(&mut record, scenario)?,
            Analysis::MeanPrice => mean_price_run(&mut record, scenario, seed)?,
        }
    }
    Ok(record)
}

/// Micro configuration with the noise streams keyed to `seed`.
pub fn seeded_micro_config(cfg: &MicroConfig, seed: u64) -> MicroConfig {
    let mut cfg = cfg.clone();
    if let Some(n) = cfg.price_noise.as_mut() {
        n.seed = derive_seed(seed, streams::PRICE);
    }
    if let Some(n) = cfg.fitness_noise.as_mut() {
        n.seed = derive_seed(seed, streams::FITNESS);
    }
    cfg
}

/// Initial market state described by the `[initial]` section.
pub fn initial_state(init: &InitialMarket, scenario: &Scenario) -> Result<MarketState> {
    let mp = &scenario.market;
    let anchor = mp.natural_price + init.anchor_offset;
    let products = init
        .sizes()
        .into_iter()
        .enumerate()
        .map(|(k, y)| {
            ProductState::new(
                ProductId(k as u64),
                y,
                init.inventory,
                anchor,
                init.preference,
                init.reproduction,
            )
        })
        .collect();
    let firms = (0..init.n_products)
        .map(|k| FirmState::new(FirmId(k as u64), vec![ProductId(k as u64)], 0.0))
        .collect();
    let mut state = MarketState::new(products, firms, anchor, mp.epsilon)?;
    state.psi = crate::micro::stationary_consumers(&state, mp)?;
    Ok(state)
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("missing [{name}] section")))
}

fn run_micro_stage(scenario: &Scenario, seed: u64) -> Result<RunRecord> {
    let cfg = seeded_micro_config(require(&scenario.micro, "micro")?, seed);
    let state = initial_state(require(&scenario.initial, "initial")?, scenario)?;
    run_micro(state, &scenario.market, &cfg, scenario.horizon)
}

/// Snapshots after the burn-in fraction.
fn stationary_snapshots<'a>(record: &'a RunRecord, scenario: &Scenario) -> &'a [Snapshot] {
    let skip = (record.snapshots.len() as f64 * scenario.fitting.burn_in).floor() as usize;
    &record.snapshots[skip.min(record.snapshots.len())..]
}

fn gibrat(record: &mut RunRecord, opts: &FitOptions) {
    let mut times = Vec::new();
    let mut variances = Vec::new();
    for snap in &mut record.snapshots {
        let logs: Vec<f64> = snap.products.iter().filter(|p| p.sales > 0.0).map(|p| p.sales.ln()).collect();
        let (_, v) = mean_var(&logs);
        snap.aggregate.extra.insert("log_sales_variance".into(), v);
        times.push(snap.tau);
        variances.push(v);
    }
    let half = times.len() / 2;
    if times.len() - half >= 3 {
        let fit = linear_fit(&times[half..], &variances[half..]);
        record.metrics.insert("gibrat.log_variance_slope".into(), fit.slope);
        record.metrics.insert("gibrat.log_variance_r2".into(), fit.r_squared);
    } else {
        record
            .diagnostics
            .push("gibrat: fewer than 6 snapshots, no variance-growth fit".into());
    }
    let sales: Vec<f64> = record
        .final_snapshot()
        .map(|s| s.products.iter().map(|p| p.sales).filter(|&y| y > 0.0).collect())
        .unwrap_or_default();
    let fit = fit_lognormal(&sales, opts);
    if let Ok(r) = &fit {
        if let Some(g) = r.gof {
            record.metrics.insert("gibrat.ks_p_value".into(), g.p_value);
        }
    }
    push_fit(record, "gibrat.final_sales", fit);
}

fn price_deviations(record: &RunRecord, scenario: &Scenario) -> Vec<f64> {
    stationary_snapshots(record, scenario)
        .iter()
        .flat_map(|s| s.products.iter().map(|p| p.price_dev))
        .collect()
}

fn laplace_price(record: &mut RunRecord, scenario: &Scenario, opts: &FitOptions) {
    let devs = price_deviations(record, scenario);
    record.metrics.insert("laplace.samples".into(), devs.len() as f64);
    record.metrics.insert("laplace.excess_kurtosis".into(), excess_kurtosis(&devs));
    let lap = fit_laplace(&devs, opts);
    let gauss = fit_gaussian(&devs, &FitOptions::without_gof());
    if let (Ok(l), Ok(g)) = (&lap, &gauss) {
        record
            .metrics
            .insert("laplace.loglik_gain_over_gaussian".into(), l.loglik - g.loglik);
    }
    push_fit(record, "laplace.price_deviation", lap);
    push_fit(record, "gaussian.price_deviation", gauss);
}

fn size_variance(record: &mut RunRecord, scenario: &Scenario) -> Result<()> {
    let pairs: Vec<(f64, f64)> = stationary_snapshots(record, scenario)
        .iter()
        .flat_map(|s| s.products.iter().map(|p| (p.sales, p.price_dev)))
        .collect();
    match size_variance_regression(&pairs, scenario.fitting.size_bins) {
        Ok(r) => {
            record.metrics.insert("size_variance.beta_hat".into(), r.beta_hat);
            record.metrics.insert("size_variance.beta_stderr".into(), r.beta_stderr);
            record.metrics.insert("size_variance.r2".into(), r.r_squared);
        }
        Err(e) => record.diagnostics.push(format!("size_variance: {e}")),
    }
    Ok(())
}

fn profit(record: &mut RunRecord, scenario: &Scenario, seed: u64) {
    let alpha = scenario.market.alpha_mean;
    let jitter = scenario.profit.as_ref().map_or(0.01, |p| p.alpha_jitter);
    let jitter_seed = derive_seed(seed, streams::COST_JITTER);
    let perturbed = |id: ProductId| alpha + jitter * (2.0 * stream_rng(jitter_seed, id.0).random::<f64>() - 1.0);
    let mut exact_dev: f64 = 0.0;
    let mut ratios = Vec::new();
    for snap in &mut record.snapshots {
        let revenue: f64 = snap.products.iter().map(|p| p.price * p.sales).sum();
        if !(revenue > 0.0) {
            continue;
        }
        let exact: f64 = snap.products.iter().map(|p| (1.0 - alpha) * p.price * p.sales).sum::<f64>() / revenue;
        let pert: f64 = snap
            .products
            .iter()
            .map(|p| (1.0 - perturbed(p.id)) * p.price * p.sales)
            .sum::<f64>()
            / revenue;
        exact_dev = exact_dev.max((exact - (1.0 - alpha)).abs());
        snap.aggregate.extra.insert("profit_ratio_exact".into(), exact);
        snap.aggregate.extra.insert("profit_ratio_perturbed".into(), pert);
        ratios.push(pert);
    }
    let (m, v) = mean_var(&ratios);
    record.metrics.insert("profit.exact_max_deviation".into(), exact_dev);
    record.metrics.insert("profit.perturbed_cv".into(), v.sqrt() / m.abs());
    record.metrics.insert("profit.perturbed_mean".into(), m);
}

fn pareto(record: &mut RunRecord, scenario: &Scenario, seed: u64, opts: &FitOptions) -> Result<()> {
    let att = require(&scenario.attachment, "attachment")?;
    let ens = require(&scenario.ensemble, "ensemble")?;
    let out = run_sde_ensemble(ens, att, derive_seed(seed, streams::FIRM_SDE))?;
    record.metrics.insert(
        "pareto.expected_exponent".into(),
        stationary_tail_exponent(att.rate, att.noise_amplitude)?,
    );
    record.metrics.insert("pareto.time".into(), out.time);
    record.metrics.insert("pareto.stationary".into(), f64::from(u8::from(out.stationary)));
    record.metrics.insert("pareto.reinjections".into(), out.reinjections as f64);
    if let Some(d) = out.drifts.last() {
        record.metrics.insert("pareto.final_drift".into(), *d);
    }
    if !out.stationary {
        record
            .diagnostics
            .push(format!("pareto: ensemble not stationary by t = {}", out.time));
    }
    record.firms = out
        .sizes
        .iter()
        .enumerate()
        .map(|(k, &x)| FirmSnapshot {
            id: FirmId(k as u64),
            sales: x,
            n_products: 0,
            cash_cow: None,
        })
        .collect();
    let fit = fit_pareto_tail(&out.sizes, scenario.fitting.tail_fraction, opts);
    if let Ok(r) = &fit {
        if let Some(e) = r.param("pdf_exponent") {
            record.metrics.insert("pareto.pdf_exponent".into(), e);
        }
    }
    push_fit(record, "pareto.firm_sizes", fit);
    Ok(())
}

fn growth_mixture(record: &mut RunRecord, scenario: &Scenario, seed: u64, opts: &FitOptions) -> Result<()> {
    let m = require(&scenario.mixture, "mixture")?;
    let samples = crate::stats::fits::sample_laplace_scale_mixture(
        m.n_samples,
        m.sigma_min,
        m.beta,
        m.decades,
        derive_seed(seed, streams::MIXTURE),
    );
    let mix = fit_scale_mixture(&samples, m.truncation, opts);
    let sub = fit_subbotin(&samples, opts);
    if let (Ok(mx), Ok(sb)) = (&mix, &sub) {
        let p = |r: &FitResult, k: &str| r.param(k).unwrap_or(f64::NAN);
        let (center, r_min) = (p(mx, "center"), p(mx, "r_min"));
        let sub_ll = subbotin_truncated_loglik(
            &samples,
            p(sb, "location"),
            p(sb, "scale"),
            p(sb, "shape"),
            center,
            r_min,
        );
        record.metrics.insert(
            "mixture.loglik_gap_per_mille".into(),
            (mx.loglik - sub_ll) / mx.n as f64 * 1e3,
        );
        record.metrics.insert("mixture.sigma".into(), p(mx, "sigma"));
        record.metrics.insert("mixture.subbotin_shape".into(), p(sb, "shape"));
    }
    push_fit(record, "mixture.growth_rates", mix);
    push_fit(record, "subbotin.growth_rates", sub);
    Ok(())
}

fn lifecycle(record: &mut RunRecord, scenario: &Scenario) -> Result<()> {
    let lc = require(&scenario.lifecycle, "lifecycle")?;
    let msp = require(&scenario.market_size, "market_size")?;
    let tl = require(&scenario.timeline, "timeline")?;
    let mp = &scenario.market;
    let times = tl.times();
    let mut prices = Vec::with_capacity(times.len());
    let mut breakdown = Vec::with_capacity(times.len());
    for &t in &times {
        prices.push(mean_price(t, lc, mp)?);
        breakdown.push(total_sales(t, lc, mp)?);
    }
    let sales: Vec<f64> = breakdown.iter().map(|b| b.total).collect();
    let revenue: Vec<f64> = prices.iter().zip(&sales).map(|(&m, &y)| nominal_revenue(m, y, mp)).collect();
    let firms = market_size(&times, &revenue, msp)?;
    let output = cumulative(&times, &sales);
    let mut costs = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let unit_cost = learning_curve(t, lc, mp)?;
        costs.push(unit_cost);
        let b = &breakdown[i];
        let cost = mp.alpha_mean * revenue[i];
        let mut agg = Aggregates {
            total_sales: b.total,
            mean_price: prices[i],
            consumers: gompertz_adopters(t, lc)?,
            n_products: 0.0,
            n_firms: firms[i].n_firms,
            revenue: revenue[i],
            cost,
            profit: revenue[i] - cost,
            extra: Default::default(),
        };
        agg.extra.insert("first_purchase".into(), b.first);
        agg.extra.insert("multiple_purchase".into(), b.multiple);
        agg.extra.insert("replacement".into(), b.replacement);
        agg.extra.insert("cumulative_output".into(), output[i]);
        agg.extra.insert("unit_cost".into(), unit_cost);
        agg.extra.insert(
            "size_regime".into(),
            if firms[i].regime == SizeRegime::Tracking { 1.0 } else { 2.0 },
        );
        record.snapshots.push(Snapshot {
            step: i as u64,
            tau: t / mp.epsilon,
            t,
            aggregate: agg,
            products: Vec::new(),
        });
    }

    let peaks = local_maxima(&sales);
    if let Some(&first) = peaks.first() {
        record.metrics.insert("lifecycle.first_peak_time".into(), times[first]);
        if let Some(&echo) = peaks.get(1) {
            record.metrics.insert("lifecycle.echo_peak_time".into(), times[echo]);
            record.metrics.insert(
                "lifecycle.echo_offset".into(),
                times[echo] - times[first] - mp.product_lifetime,
            );
        }
    }
    record.metrics.insert("lifecycle.grid_step".into(), tl.step());

    let fit_end = tl.fit_until.unwrap_or(tl.horizon);
    let n_fit = times.iter().take_while(|&&t| t <= fit_end + 1e-9).count();
    match henderson_fit(&output[..n_fit], &costs[..n_fit], 0.25, 0.75) {
        Ok(h) => {
            record.metrics.insert("lifecycle.henderson_exponent".into(), h.exponent);
            record.metrics.insert("lifecycle.henderson_r2".into(), h.r_squared);
        }
        Err(e) => record.diagnostics.push(format!("lifecycle henderson fit: {e}")),
    }

    let tracking: Vec<usize> = (0..times.len()).filter(|&i| firms[i].regime == SizeRegime::Tracking).collect();
    if tracking.len() >= 3 {
        let n: Vec<f64> = tracking.iter().map(|&i| firms[i].n_firms).collect();
        let r: Vec<f64> = tracking.iter().map(|&i| revenue[i]).collect();
        record.metrics.insert("lifecycle.size_revenue_corr".into(), pearson(&n, &r));
    }
    let settled: Vec<usize> = (0..times.len()).filter(|&i| firms[i].regime == SizeRegime::Settled).collect();
    if let Some(&start) = settled.first() {
        record.metrics.insert("lifecycle.settle_time".into(), times[start]);
        let mut worst: f64 = 0.0;
        for &i in &settled {
            for &j in settled.iter().filter(|&&j| j > i && times[j] - times[i] <= mp.product_lifetime + 1e-9) {
                worst = worst.max((firms[j].n_firms - firms[i].n_firms).abs() / firms[i].n_firms.max(f64::MIN_POSITIVE));
            }
        }
        record.metrics.insert("lifecycle.plateau_change_per_lifetime".into(), worst);
    } else {
        record
            .diagnostics
            .push("lifecycle: firm count never settles within the horizon".into());
    }
    Ok(())
}

fn mean_price_run(record: &mut RunRecord, scenario: &Scenario, seed: u64) -> Result<()> {
    let cfg = require(&scenario.mean_price, "mean_price")?;
    let tl = require(&scenario.timeline, "timeline")?;
    let mp = &scenario.market;
    let start = mp.natural_price + cfg.start_offset;
    let traj = if cfg.coupled {
        let micro = seeded_micro_config(require(&scenario.micro, "micro")?, seed);
        let state = initial_state(require(&scenario.initial, "initial")?, scenario)?;
        let horizon = cfg.micro_steps * (tl.points as u64 - 1);
        let mut engine = MicroEngine::new(state, mp.clone(), micro, horizon)?;
        integrate_coupled(&cfg.dynamics, &mut engine, start, tl.step(), tl.points - 1, cfg.micro_steps)?
    } else {
        integrate_mean_price(&cfg.dynamics, |_| cfg.variance, start, tl.horizon, tl.points, mp)?
    };
    record.diagnostics.extend(traj.diagnostics.iter().cloned());
    let use_series = record.snapshots.is_empty();
    for (i, (&t, (&m, &v))) in traj.times.iter().zip(traj.prices.iter().zip(&traj.variances)).enumerate() {
        if use_series {
            let mut agg = Aggregates {
                mean_price: m,
                ..Aggregates::default()
            };
            agg.extra.insert("price_variance".into(), v);
            record.snapshots.push(Snapshot {
                step: i as u64,
                tau: t / mp.epsilon,
                t,
                aggregate: agg,
                products: Vec::new(),
            });
        }
    }
    let (mean_variance, _) = mean_var(&traj.variances);
    record.metrics.insert("mean_price.mean_variance".into(), mean_variance);
    record.metrics.insert(
        "mean_price.linear_rate".into(),
        cfg.dynamics.linear_rate(mean_variance, mp),
    );
    match fit_exponential(&traj.times, &traj.prices) {
        Ok(f) => {
            record.metrics.insert("mean_price.fit_rate".into(), f.rate);
            record.metrics.insert("mean_price.fit_asymptote".into(), f.asymptote);
            record.metrics.insert("mean_price.fit_r2".into(), f.r_squared);
        }
        Err(e) => record.diagnostics.push(format!("mean_price fit: {e}")),
    }
    Ok(())
}
