//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use evomarket::lifecycle::{first_purchase_sales, gompertz_adopters};
use evomarket::pipeline::run_seed;
use evomarket::stats::eval_scale_mixture_pdf;
use evomarket::{preset, NoiseSpec, PriceCoupling, RunRecord, Scenario};

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn metric(record: &RunRecord, name: &str) -> f64 {
    record.metrics.get(name).copied().unwrap_or(f64::NAN)
}

fn run_one(s: &Scenario) -> RunRecord {
    let seed = s.seeds[0];
    run_seed(s, seed, &s.hash().unwrap()).unwrap_or_else(|e| panic!("{}: {e}", s.name))
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn pareto_tail() -> Verdict {
    let s = preset("pareto-tail").unwrap();
    let noise = s.attachment.as_ref().unwrap().noise_amplitude;
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, variant) in s.variants().unwrap() {
        let rate = variant.attachment.as_ref().unwrap().rate;
        let expected = 1.0 + rate / noise;
        let start = Instant::now();
        let record = run_one(&variant);
        let secs = start.elapsed().as_secs_f64();
        let hill = metric(&record, "pareto.pdf_exponent");
        let stationary = metric(&record, "pareto.stationary") == 1.0;
        pass &= within(hill, expected, 0.15) && stationary && secs < 60.0;
        parts.push(format!(
            "{}: exponent {hill:.3} vs {expected:.2} (stationary={stationary}, {secs:.1}s)",
            label.unwrap_or_default()
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn gibrat_lognormal() -> Verdict {
    let s = preset("gibrat-lognormal").unwrap();
    let amplitude = s.micro.as_ref().unwrap().fitness_noise.as_ref().unwrap().amplitude;
    let record = run_one(&s);
    let p = metric(&record, "gibrat.ks_p_value");
    let r2 = metric(&record, "gibrat.log_variance_r2");
    // Each unit of short time adds 2 * amplitude to the log-size variance.
    let slope = metric(&record, "gibrat.log_variance_slope");
    let expected_slope = 2.0 * amplitude;
    let slope_ok = within(slope, expected_slope, 0.1 * expected_slope);
    Verdict::new(
        p > 0.01 && r2 > 0.99 && slope_ok,
        format!("bootstrap KS p = {p:.3}, variance R^2 = {r2:.5}, slope {slope:.3e} vs {expected_slope:.1e}"),
    )
}

fn laplace_price() -> Verdict {
    let record = run_one(&preset("laplace-price").unwrap());
    let n = metric(&record, "laplace.samples");
    let gain = metric(&record, "laplace.loglik_gain_over_gaussian");
    let kurt = metric(&record, "laplace.excess_kurtosis");
    Verdict::new(
        n >= 1e5 && gain > 0.0 && within(kurt, 3.0, 1.0),
        format!("{n} samples, Laplace minus Gaussian loglik {gain:.1}, excess kurtosis {kurt:.3}"),
    )
}

fn with_direct_beta(base: &Scenario, beta: f64) -> Scenario {
    let mut s = base.clone();
    s.sweep = None;
    let reference = s.initial.as_ref().unwrap().sizes()[0];
    let micro = s.micro.as_mut().unwrap();
    let amplitude = micro.price_noise.as_ref().unwrap().amplitude;
    micro.price_noise = Some(NoiseSpec::white(amplitude, micro.dt, 0, 0));
    micro.price_coupling = PriceCoupling::Direct {
        beta,
        reference_size: reference,
    };
    s.validate().unwrap();
    s
}

fn size_variance() -> Verdict {
    let base = preset("size-variance").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let correlated = base.with_value("micro.price_noise.corr_exponent", 0.4).unwrap();
    let nu = correlated.micro.as_ref().unwrap().price_noise.as_ref().unwrap().corr_exponent.unwrap();
    let b = metric(&run_one(&correlated), "size_variance.beta_hat");
    pass &= within(b, nu / 2.0, 0.05);
    parts.push(format!("correlated nu={nu}: beta {b:.3} vs {:.2}", nu / 2.0));
    for (beta, tol) in [(0.2, 0.05), (0.17, 0.03), (0.15, 0.03)] {
        let b = metric(&run_one(&with_direct_beta(&base, beta)), "size_variance.beta_hat");
        pass &= within(b, beta, tol);
        parts.push(format!("direct {beta}: {b:.3}"));
    }
    Verdict::new(pass, parts.join("; "))
}

fn mixture_vs_subbotin() -> Verdict {
    let record = run_one(&preset("growth-mixture").unwrap());
    let gap = metric(&record, "mixture.loglik_gap_per_mille");
    let (norm, sigma) = (0.15, 0.81);
    let mut worst: f64 = 0.0;
    for x in [0.05f64, 0.3, 1.0, -1.7, 4.0] {
        let hand = norm * (-f64::abs(x) / sigma).exp() / f64::abs(x);
        let got = eval_scale_mixture_pdf(x, norm, sigma, 0.0).unwrap();
        worst = worst.max((got - hand).abs());
    }
    Verdict::new(
        gap.abs() < 2.0 && worst < 1e-12,
        format!("loglik gap {gap:.3} per 1000 samples, pdf max abs error {worst:.1e}"),
    )
}

fn mean_price() -> Verdict {
    let s = preset("mean-price").unwrap();
    let natural = s.market.natural_price;
    let record = run_one(&s);
    let r2 = metric(&record, "mean_price.fit_r2");
    let asym = metric(&record, "mean_price.fit_asymptote");
    let rel = (asym - natural).abs() / natural;
    Verdict::new(
        r2 > 0.98 && rel < 0.02,
        format!("exponential fit R^2 = {r2:.4}, asymptote {asym:.5} vs {natural} ({:.2}%)", 100.0 * rel),
    )
}

fn gompertz() -> Verdict {
    let lc = preset("lifecycle-bwtv").unwrap().lifecycle.unwrap();
    let a = lc.price_decline_rate;
    let n0 = lc.adopter_scale;
    let end = 10.0 / a;
    let mut worst: f64 = 0.0;
    for k in 0..=2000 {
        let t = end * k as f64 / 2000.0;
        let n = gompertz_adopters(t, &lc).unwrap();
        let yf = first_purchase_sales(t, &lc).unwrap();
        // Gompertz law: dn/dt = 2a n ln(n0 / n).
        let rhs = 2.0 * a * n * (n0 / n).ln();
        worst = worst.max((yf - rhs).abs() / yf);
    }
    let integral = simpson(|t| first_purchase_sales(t, &lc).unwrap(), 0.0, 40.0 / a, 40_000);
    let expected = n0 * (1.0 - (-lc.kappa).exp());
    let rel = (integral - expected).abs() / expected;
    Verdict::new(
        worst < 1e-6 && rel < 1e-4,
        format!("max ODE residual {worst:.1e}, integral {integral:.6} vs {expected:.6} (rel {rel:.1e})"),
    )
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        sum += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn lifecycle_record() -> (Scenario, RunRecord) {
    let s = preset("lifecycle-bwtv").unwrap();
    let r = run_one(&s);
    (s, r)
}

fn juglar_echo(s: &Scenario, record: &RunRecord) -> Verdict {
    let tl = s.timeline.as_ref().unwrap();
    let step = tl.horizon / (tl.points - 1) as f64;
    let sales: Vec<f64> = record.snapshots.iter().map(|x| x.aggregate.total_sales).collect();
    let times: Vec<f64> = record.snapshots.iter().map(|x| x.t).collect();
    let peaks: Vec<usize> = (1..sales.len() - 1)
        .filter(|&i| sales[i] > sales[i - 1] && sales[i] >= sales[i + 1])
        .collect();
    if peaks.len() < 2 {
        return Verdict::new(false, format!("only {} local maxima", peaks.len()));
    }
    let (first, echo) = (times[peaks[0]], times[peaks[1]]);
    let lifetime = s.market.product_lifetime;
    let chi = s.market.replacement_fraction;
    Verdict::new(
        chi == 0.8 && (echo - first - lifetime).abs() <= step + 1e-9,
        format!("first peak {first}, echo {echo}, lifetime {lifetime}, grid step {step}"),
    )
}

fn profit_invariant() -> Verdict {
    let record = run_one(&preset("profit-invariant").unwrap());
    let ratios: Vec<(f64, f64)> = record
        .snapshots
        .iter()
        .map(|s| {
            (
                s.aggregate.extra["profit_ratio_exact"],
                s.aggregate.extra["profit_ratio_perturbed"],
            )
        })
        .collect();
    let first = ratios[0].0;
    let dev = ratios.iter().map(|r| (r.0 - first).abs()).fold(0.0, f64::max);
    let n = ratios.len() as f64;
    let mean = ratios.iter().map(|r| r.1).sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cv = sd / mean.abs();
    Verdict::new(
        dev <= 1e-12 && cv < 0.05,
        format!("{} snapshots, exact ratio spread {dev:.1e}, perturbed std/mean {cv:.2e}", ratios.len()),
    )
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn market_size(s: &Scenario, record: &RunRecord) -> Verdict {
    let msp = s.market_size.as_ref().unwrap();
    let lifetime = s.market.product_lifetime;
    let snaps = &record.snapshots;
    let early: Vec<_> = snaps.iter().filter(|x| x.aggregate.extra["size_regime"] == 1.0).collect();
    let late: Vec<_> = snaps.iter().filter(|x| x.aggregate.extra["size_regime"] == 2.0).collect();
    let firms: Vec<f64> = early.iter().map(|x| x.aggregate.n_firms).collect();
    let revenue: Vec<f64> = early.iter().map(|x| x.aggregate.revenue).collect();
    let corr = pearson(&firms, &revenue);
    let mut drift: f64 = 0.0;
    for a in &late {
        for b in late.iter().filter(|b| b.t > a.t && b.t - a.t <= lifetime) {
            drift = drift.max((b.aggregate.n_firms - a.aggregate.n_firms).abs() / a.aggregate.n_firms);
        }
    }
    let late_span = late.last().map_or(0.0, |l| l.t) - late.first().map_or(0.0, |f| f.t);
    Verdict::new(
        msp.firms_per_revenue == 1.8e-5
            && msp.baseline_firms == 0.0
            && early.len() >= 3
            && corr > 0.95
            && late_span >= lifetime
            && drift < 0.02,
        format!(
            "early corr(N_f, R) = {corr:.4} over {} points; plateau drift {:.2}% per lifetime over {late_span} time units",
            early.len(),
            100.0 * drift
        ),
    )
}

fn henderson(s: &Scenario, record: &RunRecord) -> Verdict {
    let fit_end = s.timeline.as_ref().unwrap().fit_until.unwrap();
    let pts: Vec<(f64, f64)> = record
        .snapshots
        .iter()
        .filter(|x| x.t <= fit_end + 1e-9)
        .map(|x| (x.aggregate.extra["cumulative_output"], x.aggregate.extra["unit_cost"]))
        .collect();
    let total = pts.last().unwrap().0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts
        .iter()
        .filter(|(w, _)| *w >= 0.25 * total && *w <= 0.75 * total)
        .map(|(w, c)| (w.ln(), c.ln()))
        .unzip();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let exponent = -sxy / sxx;
    // A 20% cost reduction per doubling of output.
    let target = -(0.8f64).log2();
    let reported = metric(record, "lifecycle.henderson_exponent");
    Verdict::new(
        within(exponent, target, 0.05) && within(reported, exponent, 1e-9),
        format!("exponent {exponent:.4} vs {target:.4} over {} points", xs.len()),
    )
}

fn main() -> ExitCode {
    let (bwtv, bwtv_record) = lifecycle_record();
    let criteria: Vec<(&str, Check)> = vec![
        ("attachment Pareto tail", Box::new(pareto_tail)),
        ("Gibrat lognormal sizes", Box::new(gibrat_lognormal)),
        ("Laplace price fluctuations", Box::new(laplace_price)),
        ("size-variance scaling", Box::new(size_variance)),
        ("scale mixture vs Subbotin", Box::new(mixture_vs_subbotin)),
        ("mean-price exponential decline", Box::new(mean_price)),
        ("Gompertz diffusion", Box::new(gompertz)),
        ("replacement echo", Box::new(|| juglar_echo(&bwtv, &bwtv_record))),
        ("profit invariant", Box::new(profit_invariant)),
        ("market size", Box::new(|| market_size(&bwtv, &bwtv_record))),
        ("learning-curve exponent", Box::new(|| henderson(&bwtv, &bwtv_record))),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!v.pass);
        println!("{status} {:>2} {name}: {} [{:.1}s]", i + 1, v.detail, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
