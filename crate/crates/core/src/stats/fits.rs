//! Maximum-likelihood fits with bootstrap-corrected Kolmogorov-Smirnov
//! goodness of fit.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::ks::{kolmogorov_pvalue, ks_statistic};
use super::optim::{golden_section, numeric_hessian};
use super::special::exp_int_e1;
use super::{mean_var, sorted_median, sorted_quantile};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Lognormal,
    ParetoTail,
    Laplace,
    Gaussian,
    Subbotin,
    /// Laplace laws whose scale follows a power of a log-uniformly spread size;
    /// density `C exp(-|x - c| / sigma) / |x - c|`.
    ScaleMixture,
}

impl FitFamily {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "lognormal" => Self::Lognormal,
            "pareto_tail" | "pareto-tail" => Self::ParetoTail,
            "laplace" => Self::Laplace,
            "gaussian" => Self::Gaussian,
            "subbotin" => Self::Subbotin,
            "scale_mixture" | "scale-mixture" => Self::ScaleMixture,
            other => return Err(Error::param("family", format!("unknown family `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lognormal => "lognormal",
            Self::ParetoTail => "pareto_tail",
            Self::Laplace => "laplace",
            Self::Gaussian => "gaussian",
            Self::Subbotin => "subbotin",
            Self::ScaleMixture => "scale_mixture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FitParams {
    Lognormal {
        log_mean: f64,
        log_std: f64,
    },
    ParetoTail {
        /// Exponent of the density, `1 + tail_index`.
        pdf_exponent: f64,
        tail_index: f64,
        x_min: f64,
        tail_count: usize,
        /// Raised when the estimate drifts with the tail fraction.
        unstable: bool,
    },
    Laplace {
        location: f64,
        scale: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
    Subbotin {
        location: f64,
        scale: f64,
        shape: f64,
    },
    ScaleMixture {
        norm: f64,
        sigma: f64,
        center: f64,
        r_min: f64,
    },
}

impl FitParams {
    pub fn family(&self) -> FitFamily {
        match self {
            Self::Lognormal { .. } => FitFamily::Lognormal,
            Self::ParetoTail { .. } => FitFamily::ParetoTail,
            Self::Laplace { .. } => FitFamily::Laplace,
            Self::Gaussian { .. } => FitFamily::Gaussian,
            Self::Subbotin { .. } => FitFamily::Subbotin,
            Self::ScaleMixture { .. } => FitFamily::ScaleMixture,
        }
    }

    /// Named parameter values in reporting order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Self::Lognormal { log_mean, log_std } => vec![("log_mean", log_mean), ("log_std", log_std)],
            Self::ParetoTail {
                pdf_exponent,
                tail_index,
                x_min,
                tail_count,
                ..
            } => vec![
                ("pdf_exponent", pdf_exponent),
                ("tail_index", tail_index),
                ("x_min", x_min),
                ("tail_count", tail_count as f64),
            ],
            Self::Laplace { location, scale } => vec![("location", location), ("scale", scale)],
            Self::Gaussian { mean, std } => vec![("mean", mean), ("std", std)],
            Self::Subbotin { location, scale, shape } => {
                vec![("location", location), ("scale", scale), ("shape", shape)]
            }
            Self::ScaleMixture {
                norm,
                sigma,
                center,
                r_min,
            } => vec![("norm", norm), ("sigma", sigma), ("center", center), ("r_min", r_min)],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: &'static str,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GofMethod {
    None,
    /// Kolmogorov limit law; anti-conservative after parameter estimation.
    Asymptotic,
    /// Parametric bootstrap: resample from the fit, refit, recompute the statistic.
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub ks_statistic: f64,
    pub p_value: f64,
    pub method: GofMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub gof: GofMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            gof: GofMethod::Bootstrap {
                resamples: 200,
                seed: 0x0005_EED0_FF17,
            },
        }
    }
}

impl FitOptions {
    pub fn without_gof() -> Self {
        Self { gof: GofMethod::None }
    }

    pub fn asymptotic() -> Self {
        Self {
            gof: GofMethod::Asymptotic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    /// Standard errors aligned with `params.values()`.
    pub stderr: Vec<f64>,
    pub loglik: f64,
    pub n: usize,
    pub gof: Option<GoodnessOfFit>,
    /// Set when the sample collapses to a point mass.
    pub degenerate: bool,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    fn new(params: FitParams, stderr: Vec<f64>, loglik: f64, n: usize) -> Self {
        Self {
            params,
            stderr,
            loglik,
            n,
            gof: None,
            degenerate: false,
            converged: true,
            diagnostics: Vec::new(),
        }
    }

    pub fn family(&self) -> FitFamily {
        self.params.family()
    }

    pub fn estimates(&self) -> Vec<ParamEstimate> {
        self.params
            .values()
            .into_iter()
            .zip(self.stderr.iter().copied().chain(std::iter::repeat(f64::NAN)))
            .map(|((name, value), stderr)| ParamEstimate { name, value, stderr })
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name)
    }

    /// Log-likelihood per 1000 samples, for comparing fits across sample sizes.
    pub fn loglik_per_mille(&self) -> f64 {
        self.loglik * 1000.0 / self.n as f64
    }
}

/// Minimum sample size for which a goodness-of-fit test is attempted.
pub const MIN_GOF_SAMPLES: usize = 10;

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain("fit", format!("non-finite sample {x}")));
    }
    Ok(())
}

/// Runs the configured goodness-of-fit test. `sample` draws `n` values from a
/// fitted parameter set, `refit` re-estimates it, `cdf` evaluates it.
fn goodness_of_fit<P: Sync>(
    sorted: &[f64],
    fitted: &P,
    method: GofMethod,
    cdf: impl Fn(&P, f64) -> f64 + Sync,
    sample: impl Fn(&P, usize, &mut SimRng) -> Vec<f64> + Sync,
    refit: impl Fn(&[f64]) -> Result<P> + Sync,
) -> Option<GoodnessOfFit> {
    let n = sorted.len();
    if n < MIN_GOF_SAMPLES {
        return None;
    }
    if method == GofMethod::None {
        return None;
    }
    let d = ks_statistic(sorted, |x| cdf(fitted, x));
    let p_value = match method {
        GofMethod::None => unreachable!(),
        GofMethod::Asymptotic => kolmogorov_pvalue(d, n),
        GofMethod::Bootstrap { resamples, seed } => {
            let exceed: usize = (0..resamples as u64)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream_rng(seed, b);
                    let mut xs = sample(fitted, n, &mut rng);
                    xs.sort_by(f64::total_cmp);
                    match refit(&xs) {
                        Ok(p) => usize::from(ks_statistic(&xs, |x| cdf(&p, x)) >= d),
                        Err(_) => 1,
                    }
                })
                .sum();
            (1 + exceed) as f64 / (resamples + 1) as f64
        }
    };
    Some(GoodnessOfFit {
        ks_statistic: d,
        p_value,
        method,
    })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------- lognormal

#[derive(Debug, Clone, Copy)]
struct LogNormal {
    m: f64,
    s: f64,
}

fn lognormal_mle(sorted: &[f64]) -> Result<LogNormal> {
    let logs: Vec<f64> = sorted.iter().map(|x| x.ln()).collect();
    let (m, v) = mean_var(&logs);
    Ok(LogNormal { m, s: v.sqrt() })
}

/// Lognormal fit by the closed-form MLE on log-samples.
pub fn fit_lognormal(samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    if let Some(x) = samples.iter().find(|&&x| x <= 0.0) {
        return Err(Error::domain("fit_lognormal", format!("sample {x} is not positive")));
    }
    let sorted = sorted_copy(samples);
    let fit = lognormal_mle(&sorted)?;
    let n = sorted.len();
    let params = FitParams::Lognormal {
        log_mean: fit.m,
        log_std: fit.s,
    };
    if fit.s == 0.0 {
        let mut r = FitResult::new(params, vec![0.0, 0.0], f64::NAN, n);
        r.degenerate = true;
        r.diagnostics.push("zero log-variance: point mass".into());
        return Ok(r);
    }
    let nf = n as f64;
    let loglik = sorted
        .iter()
        .map(|x| {
            let z = (x.ln() - fit.m) / fit.s;
            -x.ln() - fit.s.ln() - 0.5 * LN_2PI - 0.5 * z * z
        })
        .sum();
    let mut r = FitResult::new(params, vec![fit.s / nf.sqrt(), fit.s / (2.0 * nf).sqrt()], loglik, n);
    r.gof = goodness_of_fit(
        &sorted,
        &fit,
        opts.gof,
        |p, x| normal_cdf((x.ln() - p.m) / p.s),
        |p, n, rng| {
            (0..n)
                .map(|_| (p.m + p.s * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect()
        },
        lognormal_mle,
    );
    Ok(r)
}

// ---------------------------------------------------------------- gaussian

#[derive(Debug, Clone, Copy)]
struct Normal {
    m: f64,
    s: f64,
}

fn gaussian_loglik(xs: &[f64], m: f64, s: f64) -> f64 {
    xs.iter()
        .map(|x| {
            let z = (x - m) / s;
            -s.ln() - 0.5 * LN_2PI - 0.5 * z * z
        })
        .sum()
}

/// Gaussian MLE (population standard deviation).
pub fn fit_gaussian(samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    let sorted = sorted_copy(samples);
    let (m, v) = mean_var(&sorted);
    let s = v.sqrt();
    let n = sorted.len();
    let params = FitParams::Gaussian { mean: m, std: s };
    if s == 0.0 {
        let mut r = FitResult::new(params, vec![0.0, 0.0], f64::NAN, n);
        r.degenerate = true;
        return Ok(r);
    }
    let nf = n as f64;
    let mut r = FitResult::new(
        params,
        vec![s / nf.sqrt(), s / (2.0 * nf).sqrt()],
        gaussian_loglik(&sorted, m, s),
        n,
    );
    r.gof = goodness_of_fit(
        &sorted,
        &Normal { m, s },
        opts.gof,
        |p, x| normal_cdf((x - p.m) / p.s),
        |p, n, rng| (0..n).map(|_| p.m + p.s * rng.sample::<f64, _>(StandardNormal)).collect(),
        |xs| {
            let (m, v) = mean_var(xs);
            Ok(Normal { m, s: v.sqrt() })
        },
    );
    Ok(r)
}

// ---------------------------------------------------------------- laplace

#[derive(Debug, Clone, Copy)]
struct Laplace {
    m: f64,
    b: f64,
}

fn laplace_mle(sorted: &[f64]) -> Laplace {
    let m = sorted_median(sorted);
    let b = sorted.iter().map(|x| (x - m).abs()).sum::<f64>() / sorted.len() as f64;
    Laplace { m, b }
}

fn laplace_cdf(p: &Laplace, x: f64) -> f64 {
    let z = (x - p.m) / p.b;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

pub(crate) fn sample_laplace(location: f64, scale: f64, rng: &mut SimRng) -> f64 {
    let e: f64 = rng.sample(Exp1);
    if rng.random::<bool>() {
        location + scale * e
    } else {
        location - scale * e
    }
}

/// Laplace fit: location is the sample median, scale the mean absolute
/// deviation from it (both exact maximum-likelihood estimates).
pub fn fit_laplace(samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    let sorted = sorted_copy(samples);
    let fit = laplace_mle(&sorted);
    let n = sorted.len();
    let params = FitParams::Laplace {
        location: fit.m,
        scale: fit.b,
    };
    if fit.b == 0.0 {
        let mut r = FitResult::new(params, vec![0.0, 0.0], f64::NAN, n);
        r.degenerate = true;
        return Ok(r);
    }
    let nf = n as f64;
    let loglik = -nf * (2.0 * fit.b).ln() - nf;
    let mut r = FitResult::new(params, vec![fit.b / nf.sqrt(), fit.b / nf.sqrt()], loglik, n);
    r.gof = goodness_of_fit(
        &sorted,
        &fit,
        opts.gof,
        laplace_cdf,
        |p, n, rng| (0..n).map(|_| sample_laplace(p.m, p.b, rng)).collect(),
        |xs| Ok(laplace_mle(xs)),
    );
    Ok(r)
}

// ---------------------------------------------------------------- pareto tail

/// Tail fractions probed for the stability diagnostic.
pub const STABILITY_FRACTIONS: [f64; 3] = [0.01, 0.05, 0.1];
pub const MIN_TAIL_POINTS: usize = 50;

/// Hill estimate on the `k` largest values of a descending sample; returns
/// `(tail_index, threshold)`.
fn hill(desc: &[f64], k: usize) -> Result<(f64, f64)> {
    let threshold = desc[k];
    if !(threshold > 0.0) {
        return Err(Error::domain("fit_pareto_tail", "tail threshold must be positive"));
    }
    let s: f64 = desc[..k].iter().map(|x| (x / threshold).ln()).sum();
    if !(s > 0.0) {
        return Err(Error::Degenerate("tail has no spread".into()));
    }
    Ok((k as f64 / s, threshold))
}

#[derive(Debug, Clone, Copy)]
struct Pareto {
    alpha: f64,
    x_min: f64,
}

/// Hill estimator on the top `tail_frac` of the sample.
pub fn fit_pareto_tail(samples: &[f64], tail_frac: f64, opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    if !(tail_frac > 0.0 && tail_frac <= 0.5) {
        return Err(Error::param("tail_frac", "must lie in (0, 0.5]"));
    }
    if let Some(x) = samples.iter().find(|&&x| x <= 0.0) {
        return Err(Error::domain("fit_pareto_tail", format!("sample {x} is not positive")));
    }
    let mut desc = samples.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let n = desc.len();
    let k = (tail_frac * n as f64).floor() as usize;
    if k < MIN_TAIL_POINTS || k >= n {
        return Err(Error::InsufficientData(format!(
            "{k} tail points, need at least {MIN_TAIL_POINTS}"
        )));
    }
    let (alpha, x_min) = hill(&desc, k)?;

    // Nested Hill estimates differ by roughly sqrt(var_small - var_large)
    // when the tail is a true power law.
    let probes: Vec<(usize, f64)> = STABILITY_FRACTIONS
        .iter()
        .map(|f| (f * n as f64).floor() as usize)
        .filter(|&kk| kk >= MIN_TAIL_POINTS && kk < n)
        .filter_map(|kk| hill(&desc, kk).ok().map(|(a, _)| (kk, a)))
        .collect();
    let mut unstable = false;
    for (i, &(ki, ai)) in probes.iter().enumerate() {
        for &(kj, aj) in &probes[i + 1..] {
            let (small, large) = if ki < kj { (ki, kj) } else { (kj, ki) };
            let a_ref = 0.5 * (ai + aj);
            let sd = a_ref * (1.0 / small as f64 - 1.0 / large as f64).max(0.0).sqrt();
            if (ai - aj).abs() > 3.0 * sd.max(1e-12) {
                unstable = true;
            }
        }
    }

    let tail: Vec<f64> = {
        let mut t = desc[..k].to_vec();
        t.reverse();
        t
    };
    let kf = k as f64;
    let loglik = tail
        .iter()
        .map(|x| alpha.ln() + alpha * x_min.ln() - (alpha + 1.0) * x.ln())
        .sum();
    let params = FitParams::ParetoTail {
        pdf_exponent: 1.0 + alpha,
        tail_index: alpha,
        x_min,
        tail_count: k,
        unstable,
    };
    let se = alpha / kf.sqrt();
    let mut r = FitResult::new(params, vec![se, se, 0.0, 0.0], loglik, k);
    if unstable {
        r.diagnostics
            .push("tail exponent drifts across tail fractions 0.01/0.05/0.1".into());
    }
    r.gof = goodness_of_fit(
        &tail,
        &Pareto { alpha, x_min },
        opts.gof,
        |p, x| 1.0 - (p.x_min / x).powf(p.alpha),
        |p, n, rng| {
            (0..n)
                .map(|_| p.x_min * (1.0 - rng.random::<f64>()).powf(-1.0 / p.alpha))
                .collect()
        },
        |xs| {
            let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min).min(x_min);
            let s: f64 = xs.iter().map(|x| (x / x_min).ln()).sum();
            Ok(Pareto {
                alpha: xs.len() as f64 / s,
                x_min,
            })
        },
    );
    Ok(r)
}

// ---------------------------------------------------------------- subbotin

/// Density `b / (2 a Gamma(1/b)) exp(-(|x - m| / a)^b)`.
pub fn subbotin_pdf(x: f64, location: f64, scale: f64, shape: f64) -> f64 {
    let z = (x - location).abs() / scale;
    (shape.ln() - std::f64::consts::LN_2 - scale.ln() - ln_gamma(1.0 / shape) - z.powf(shape)).exp()
}

pub fn subbotin_cdf(x: f64, location: f64, scale: f64, shape: f64) -> f64 {
    let z = (x - location) / scale;
    let u = z.abs().powf(shape);
    let p = if u.is_nan() {
        f64::NAN
    } else if u <= 0.0 {
        0.0
    } else if u.is_infinite() {
        1.0
    } else {
        gamma_lr(1.0 / shape, u)
    };
    if z < 0.0 {
        0.5 - 0.5 * p
    } else {
        0.5 + 0.5 * p
    }
}

/// Converts to the `C1 exp(-C2 |x|^shape)` form; `C1` is the normalizing prefactor.
pub fn subbotin_prefactor_form(scale: f64, shape: f64) -> (f64, f64) {
    let c1 = shape / (2.0 * scale * ln_gamma(1.0 / shape).exp());
    (c1, scale.powf(-shape))
}

/// Inverse of [`subbotin_prefactor_form`] for the scale.
pub fn subbotin_scale_from_rate(c2: f64, shape: f64) -> f64 {
    c2.powf(-1.0 / shape)
}

#[derive(Debug, Clone, Copy)]
struct Subbotin {
    m: f64,
    a: f64,
    b: f64,
}

fn sample_subbotin(p: &Subbotin, n: usize, rng: &mut SimRng) -> Vec<f64> {
    let g = Gamma::new(1.0 / p.b, 1.0).expect("positive shape");
    (0..n)
        .map(|_| {
            let r = p.a * g.sample(rng).powf(1.0 / p.b);
            if rng.random::<bool>() {
                p.m + r
            } else {
                p.m - r
            }
        })
        .collect()
}

struct SubbotinProfile<'a> {
    sorted: &'a [f64],
    median: f64,
    mean: f64,
    lo: f64,
    hi: f64,
    tol: f64,
}

impl<'a> SubbotinProfile<'a> {
    fn new(sorted: &'a [f64]) -> Self {
        let (mean, var) = mean_var(sorted);
        Self {
            sorted,
            median: sorted_median(sorted),
            mean,
            lo: sorted_quantile(sorted, 0.3),
            hi: sorted_quantile(sorted, 0.7),
            tol: 1e-7 * var.sqrt().max(1e-300),
        }
    }

    fn abs_moment(&self, m: f64, b: f64) -> f64 {
        self.sorted.iter().map(|x| (x - m).abs().powf(b)).sum::<f64>() / self.sorted.len() as f64
    }

    fn location(&self, b: f64) -> f64 {
        if (b - 1.0).abs() < 1e-12 {
            return self.median;
        }
        if (b - 2.0).abs() < 1e-12 {
            return self.mean;
        }
        let (lo, hi) = (self.lo.min(self.mean), self.hi.max(self.mean));
        let (mut m, mut best) = golden_section(|m| self.abs_moment(m, b), lo, hi, self.tol);
        let med_obj = self.abs_moment(self.median, b);
        if med_obj < best {
            m = self.median;
            best = med_obj;
        }
        if b < 1.0 {
            // concave between data points: minima sit on observations
            let idx = self.sorted.partition_point(|&x| x < m);
            let from = idx.saturating_sub(10);
            let to = (idx + 10).min(self.sorted.len());
            for &x in &self.sorted[from..to] {
                let v = self.abs_moment(x, b);
                if v < best {
                    best = v;
                    m = x;
                }
            }
        }
        m
    }

    /// Profile log-likelihood with scale at its closed-form optimum.
    fn loglik_at(&self, b: f64) -> (f64, Subbotin) {
        let m = self.location(b);
        self.loglik_fixed_location(m, b)
    }

    fn loglik_fixed_location(&self, m: f64, b: f64) -> (f64, Subbotin) {
        let n = self.sorted.len() as f64;
        let moment = self.abs_moment(m, b);
        let a = (b * moment).powf(1.0 / b);
        let ll = n * (b.ln() - std::f64::consts::LN_2 - a.ln() - ln_gamma(1.0 / b)) - n / b;
        (ll, Subbotin { m, a, b })
    }

    fn full_loglik(&self, m: f64, a: f64, b: f64) -> f64 {
        let n = self.sorted.len() as f64;
        n * (b.ln() - std::f64::consts::LN_2 - a.ln() - ln_gamma(1.0 / b)) - n * self.abs_moment(m, b) / a.powf(b)
    }
}

pub const SUBBOTIN_SHAPE_RANGE: (f64, f64) = (0.3, 4.0);
pub const MIN_SUBBOTIN_SAMPLES: usize = 100;

fn subbotin_mle(sorted: &[f64]) -> Result<(Subbotin, f64, bool)> {
    let prof = SubbotinProfile::new(sorted);
    let (lo, hi) = SUBBOTIN_SHAPE_RANGE;
    let mut grid: Vec<f64> = (0..24)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 23.0).exp())
        .chain([1.0, 2.0])
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let evals: Vec<(f64, Subbotin)> = grid.iter().map(|&b| prof.loglik_at(b)).collect();
    let best = (0..grid.len())
        .max_by(|&i, &j| evals[i].0.total_cmp(&evals[j].0))
        .ok_or_else(|| Error::Degenerate("empty shape grid".into()))?;
    let (mut ll, mut fit) = evals[best];
    let at_edge = best == 0 || best == grid.len() - 1;
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(grid.len() - 1)];
    if right > left {
        let (lb, neg) = golden_section(|lb| -prof.loglik_at(lb.exp()).0, left.ln(), right.ln(), 1e-6);
        if -neg > ll {
            let (l2, f2) = prof.loglik_at(lb.exp());
            ll = l2;
            fit = f2;
        }
    }
    if !fit.a.is_finite() || fit.a <= 0.0 {
        return Err(Error::Degenerate("sample has no spread".into()));
    }
    Ok((fit, ll, !at_edge))
}

/// Maximum-likelihood Subbotin (exponential-power) fit over location, scale
/// and shape. The shape is profiled over a log grid on `[0.3, 4]` that
/// contains 1 and 2 exactly, then refined by golden-section search.
pub fn fit_subbotin(samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    if samples.len() < MIN_SUBBOTIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "subbotin fit needs at least {MIN_SUBBOTIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let sorted = sorted_copy(samples);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Degenerate("constant sample".into()));
    }
    let (fit, loglik, interior) = subbotin_mle(&sorted)?;
    let n = sorted.len();
    let nf = n as f64;

    let prof = SubbotinProfile::new(&sorted);
    let h = [fit.a * 1e-4, fit.b * 1e-4];
    let hess = numeric_hessian(|p: &[f64; 2]| -prof.full_loglik(fit.m, p[0], p[1]), &[fit.a, fit.b], &h);
    let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
    let (se_a, se_b) = if det > 0.0 {
        ((hess[1][1] / det).sqrt(), (hess[0][0] / det).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    // Fisher information of the location is finite only for shape > 1/2.
    let se_m = if fit.b > 0.5 {
        let info = fit.b * fit.b * (ln_gamma(2.0 - 1.0 / fit.b) - ln_gamma(1.0 / fit.b)).exp() / (fit.a * fit.a);
        (1.0 / (nf * info)).sqrt()
    } else {
        0.0
    };

    let mut r = FitResult::new(
        FitParams::Subbotin {
            location: fit.m,
            scale: fit.a,
            shape: fit.b,
        },
        vec![se_m, se_a, se_b],
        loglik,
        n,
    );
    if !interior {
        r.converged = false;
        r.diagnostics.push(format!(
            "shape optimum {:.4} lies on the edge of the search range [{}, {}]",
            fit.b, SUBBOTIN_SHAPE_RANGE.0, SUBBOTIN_SHAPE_RANGE.1
        ));
    }
    if !(se_a.is_finite() && se_b.is_finite()) {
        r.diagnostics.push("observed information not positive definite".into());
    }
    r.gof = goodness_of_fit(
        &sorted,
        &fit,
        opts.gof,
        |p, x| subbotin_cdf(x, p.m, p.a, p.b),
        sample_subbotin,
        |xs| subbotin_mle(xs).map(|(p, _, _)| p),
    );
    Ok(r)
}

/// Subbotin log-likelihood of the samples with `|x - center| >= r_min`,
/// conditioned on that support.
pub fn subbotin_truncated_loglik(
    samples: &[f64],
    location: f64,
    scale: f64,
    shape: f64,
    center: f64,
    r_min: f64,
) -> f64 {
    let inside = subbotin_cdf(center + r_min, location, scale, shape) - subbotin_cdf(center - r_min, location, scale, shape);
    let log_mass = (1.0 - inside).ln();
    samples
        .iter()
        .filter(|x| (*x - center).abs() >= r_min)
        .map(|&x| subbotin_pdf(x, location, scale, shape).ln() - log_mass)
        .sum()
}

// ---------------------------------------------------------------- scale mixture

/// Density `norm * exp(-|x - center| / sigma) / |x - center|`.
pub fn eval_scale_mixture_pdf(x: f64, norm: f64, sigma: f64, center: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    let r = (x - center).abs();
    if r == 0.0 {
        return Err(Error::domain("eval_scale_mixture_pdf", "density is singular at the center"));
    }
    Ok(norm * (-r / sigma).exp() / r)
}

/// Mass of the unnormalized kernel `exp(-|r|/sigma)/|r|` over `|r| >= r_min`.
pub fn scale_mixture_mass(sigma: f64, r_min: f64) -> f64 {
    2.0 * exp_int_e1(r_min / sigma)
}

#[derive(Debug, Clone, Copy)]
struct Mixture {
    sigma: f64,
    center: f64,
    r_min: f64,
}

impl Mixture {
    fn norm(&self) -> f64 {
        1.0 / scale_mixture_mass(self.sigma, self.r_min)
    }

    fn cdf(&self, x: f64) -> f64 {
        let d = x - self.center;
        let u0 = self.r_min / self.sigma;
        let e0 = exp_int_e1(u0);
        if d <= -self.r_min {
            exp_int_e1(-d / self.sigma) / (2.0 * e0)
        } else if d < self.r_min {
            0.5
        } else {
            0.5 + (e0 - exp_int_e1(d / self.sigma)) / (2.0 * e0)
        }
    }

    /// Draws `t = |d| / sigma` from the density proportional to `e^-t / t` on `[u0, inf)`.
    fn sample_radius(&self, rng: &mut SimRng) -> f64 {
        let u0 = self.r_min / self.sigma;
        let near_mass = if u0 < 1.0 { exp_int_e1(u0) - exp_int_e1(1.0) } else { 0.0 };
        let far_mass = exp_int_e1(u0.max(1.0));
        let p_near = near_mass / (near_mass + far_mass);
        if rng.random::<f64>() < p_near {
            // log-uniform proposal on [u0, 1], accept with e^-(t - u0)
            loop {
                let t = u0 * (-u0.ln() * rng.random::<f64>()).exp();
                if rng.random::<f64>() < (-(t - u0)).exp() {
                    return t;
                }
            }
        }
        // shifted exponential proposal on [lo, inf), accept with lo / t
        let lo = u0.max(1.0);
        loop {
            let t = lo + rng.sample::<f64, _>(Exp1);
            if rng.random::<f64>() < lo / t {
                return t;
            }
        }
    }

    fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let r = self.sigma * self.sample_radius(rng);
                if rng.random::<bool>() {
                    self.center + r
                } else {
                    self.center - r
                }
            })
            .collect()
    }
}

fn mixture_loglik(radii: &[f64], sigma: f64, r_min: f64) -> f64 {
    let n = radii.len() as f64;
    let s: f64 = radii.iter().sum();
    let sl: f64 = radii.iter().map(|r| r.ln()).sum();
    -n * scale_mixture_mass(sigma, r_min).ln() - s / sigma - sl
}

fn mixture_mle(radii: &[f64], center: f64, r_min: f64) -> Result<Mixture> {
    let max = radii.iter().copied().fold(0.0, f64::max);
    let lo = (r_min * 1e-4).ln();
    let hi = (max * 1e3).ln();
    let (ls, _) = golden_section(|ls| -mixture_loglik(radii, ls.exp(), r_min), lo, hi, 1e-10);
    let sigma = ls.exp();
    if !sigma.is_finite() {
        return Err(Error::Degenerate("scale-mixture fit did not converge".into()));
    }
    Ok(Mixture { sigma, center, r_min })
}

/// How the truncation radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TruncationRule {
    /// A fixed radius.
    Radius { r_min: f64 },
    /// The given quantile of the absolute deviations from the center.
    Quantile { p: f64 },
}

impl Default for TruncationRule {
    fn default() -> Self {
        TruncationRule::Quantile { p: 0.5 }
    }
}

/// Fits `C exp(-|x - c| / sigma) / |x - c|` by maximum likelihood on the
/// truncated support `|x - c| >= r_min`. The center is the sample median;
/// `C` is the normalization of the truncated density.
pub fn fit_scale_mixture(samples: &[f64], truncation: TruncationRule, opts: &FitOptions) -> Result<FitResult> {
    check_finite(samples)?;
    let sorted = sorted_copy(samples);
    let center = sorted_median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - center).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let r_min = match truncation {
        TruncationRule::Radius { r_min } => r_min,
        TruncationRule::Quantile { p } => sorted_quantile(&dev, p),
    };
    if !(r_min > 0.0) {
        return Err(Error::param("r_min", "truncation radius must be positive"));
    }
    let radii: Vec<f64> = dev.iter().copied().filter(|&d| d >= r_min).collect();
    if radii.is_empty() {
        return Err(Error::InsufficientData("every sample lies inside r_min".into()));
    }
    let fit = mixture_mle(&radii, center, r_min)?;
    let n = radii.len();
    let loglik = mixture_loglik(&radii, fit.sigma, r_min);

    let h = fit.sigma * 1e-4;
    let d2 = (mixture_loglik(&radii, fit.sigma + h, r_min) - 2.0 * loglik + mixture_loglik(&radii, fit.sigma - h, r_min))
        / (h * h);
    let se_sigma = if d2 < 0.0 { (-1.0 / d2).sqrt() } else { f64::NAN };
    let norm = fit.norm();
    let dnorm = (Mixture {
        sigma: fit.sigma + h,
        ..fit
    }
    .norm()
        - Mixture {
            sigma: fit.sigma - h,
            ..fit
        }
        .norm())
        / (2.0 * h);
    let mut r = FitResult::new(
        FitParams::ScaleMixture {
            norm,
            sigma: fit.sigma,
            center,
            r_min,
        },
        vec![dnorm.abs() * se_sigma, se_sigma, 0.0, 0.0],
        loglik,
        n,
    );
    let kept: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|x| (x - center).abs() >= r_min)
        .collect();
    r.gof = goodness_of_fit(
        &kept,
        &fit,
        opts.gof,
        |p, x| p.cdf(x),
        |p, n, rng| p.sample(n, rng),
        |xs| {
            let radii: Vec<f64> = xs.iter().map(|x| (x - center).abs()).collect();
            mixture_mle(&radii, center, r_min)
        },
    );
    Ok(r)
}

/// Default tail fraction used when a Pareto tail is fitted by family name.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.05;

/// Fits `family` with its default tuning knobs.
pub fn fit_family(family: FitFamily, samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    match family {
        FitFamily::Lognormal => fit_lognormal(samples, opts),
        FitFamily::ParetoTail => fit_pareto_tail(samples, DEFAULT_TAIL_FRACTION, opts),
        FitFamily::Laplace => fit_laplace(samples, opts),
        FitFamily::Gaussian => fit_gaussian(samples, opts),
        FitFamily::Subbotin => fit_subbotin(samples, opts),
        FitFamily::ScaleMixture => fit_scale_mixture(samples, TruncationRule::default(), opts),
    }
}

/// Generative model for the scale mixture: sizes log-uniform over
/// `[1, 10^decades]`, each observation Laplace with scale
/// `sigma_min * size^-beta`.
pub fn sample_laplace_scale_mixture(n: usize, sigma_min: f64, beta: f64, decades: f64, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::rng_from_seed(seed);
    let span = decades * std::f64::consts::LN_10;
    (0..n)
        .map(|_| {
            let size = (span * rng.random::<f64>()).exp();
            sample_laplace(0.0, sigma_min * size.powf(-beta), &mut rng)
        })
        .collect()
}
