//! Fluctuation sources: white Gaussian noise and long-range power-law
//! correlated Gaussian noise, plus an estimator for the correlation exponent.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Correlated,
}

/// Description of one noise sequence. Each step has variance `2 * amplitude * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr_exponent: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub length: usize,
    #[serde(default = "one")]
    pub dt: f64,
}

fn one() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn white(amplitude: f64, dt: f64, length: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::White,
            amplitude,
            corr_exponent: None,
            seed,
            length,
            dt,
        }
    }

    pub fn correlated(amplitude: f64, nu: f64, dt: f64, length: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Correlated,
            amplitude,
            corr_exponent: Some(nu),
            seed,
            length,
            dt,
        }
    }

    /// Standard deviation of a single step.
    pub fn step_std(&self) -> f64 {
        (2.0 * self.amplitude * self.dt).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::param("noise.amplitude", "must be finite and > 0"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("noise.dt", "must be finite and > 0"));
        }
        if self.kind == NoiseKind::Correlated {
            match self.corr_exponent {
                Some(nu) if nu > 0.0 && nu < 1.0 => {}
                Some(nu) => {
                    return Err(Error::param(
                        "noise.corr_exponent",
                        format!("must lie in (0, 1), got {nu}"),
                    ))
                }
                None => return Err(Error::param("noise.corr_exponent", "required for correlated noise")),
            }
        }
        Ok(())
    }

    /// Dispatches on the kind.
    pub fn generate(&self) -> Result<Vec<f64>> {
        match self.kind {
            NoiseKind::White => generate_white(self),
            NoiseKind::Correlated => generate_correlated(self),
        }
    }
}

/// I.i.d. Gaussian sequence with variance `2 D dt` per step.
pub fn generate_white(spec: &NoiseSpec) -> Result<Vec<f64>> {
    if spec.kind != NoiseKind::White {
        return Err(Error::param("noise.kind", "generate_white requires white noise"));
    }
    spec.validate()?;
    let sd = spec.step_std();
    let mut rng = rng_from_seed(spec.seed);
    Ok((0..spec.length)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Stationary Gaussian sequence whose autocorrelation decays as `lag^-nu`.
///
/// Built by Fourier filtering a white spectrum over twice the requested
/// length; the second half is discarded to suppress the periodic wrap-around.
pub fn generate_correlated(spec: &NoiseSpec) -> Result<Vec<f64>> {
    if spec.kind != NoiseKind::Correlated {
        return Err(Error::param("noise.kind", "generate_correlated requires correlated noise"));
    }
    spec.validate()?;
    let n = spec.length;
    if n == 0 {
        return Ok(Vec::new());
    }
    let nu = spec.corr_exponent.unwrap_or_default();
    let m = (2 * n).next_power_of_two();
    let mut rng = rng_from_seed(spec.seed);
    let mut buf: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let expo = -(1.0 - nu) / 2.0;
    buf[0] = Complex64::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(m - k) as f64 / m as f64;
        *c *= f.powf(expo);
    }
    planner.plan_fft_inverse(m).process(&mut buf);

    let mut out: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { spec.step_std() / var.sqrt() } else { 0.0 };
    for x in &mut out {
        *x = (*x - mean) * scale;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMethod {
    /// Log-periodogram regression over the frequencies matching the lag window.
    #[default]
    Spectral,
    /// Log-log regression of the sample autocorrelation, corrected for the
    /// bias introduced by subtracting the sample mean.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentOptions {
    pub method: ExponentMethod,
    pub min_lag: usize,
    pub max_lag: usize,
}

impl Default for ExponentOptions {
    fn default() -> Self {
        Self {
            method: ExponentMethod::Spectral,
            min_lag: 10,
            max_lag: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub nu: f64,
    pub stderr: f64,
    /// False when the autocorrelation at the start of the lag window is
    /// indistinguishable from zero, i.e. there is nothing to fit.
    pub power_law_regime: bool,
    pub method: ExponentMethod,
}

impl ExponentEstimate {
    pub fn covers(&self, nu: f64, sigmas: f64) -> bool {
        (self.nu - nu).abs() <= sigmas * self.stderr
    }
}

pub const MIN_EXPONENT_SERIES: usize = 1 << 14;

/// Fits the power-law decay exponent of the autocorrelation of `series`.
pub fn estimate_autocorr_exponent(series: &[f64], opts: &ExponentOptions) -> Result<ExponentEstimate> {
    let n = series.len();
    if n < MIN_EXPONENT_SERIES {
        return Err(Error::InsufficientData(format!(
            "exponent estimation needs at least {MIN_EXPONENT_SERIES} points, got {n}"
        )));
    }
    if !(opts.min_lag >= 1 && opts.max_lag > opts.min_lag && opts.max_lag < n / 2) {
        return Err(Error::param("lag window", "need 1 <= min_lag < max_lag < n/2"));
    }
    let acf = autocorrelation(series)?;
    let power_law_regime = acf[opts.min_lag] > 4.0 / (n as f64).sqrt();

    let (nu, stderr) = match opts.method {
        ExponentMethod::Spectral => spectral_exponent(series, opts),
        ExponentMethod::Direct => direct_exponent(&acf, n, opts),
    };
    Ok(ExponentEstimate {
        nu,
        stderr,
        power_law_regime,
        method: opts.method,
    })
}

/// Sample autocorrelation for all lags, normalized so that lag 0 is 1.
pub fn autocorrelation(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|x| Complex64::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in &mut buf {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    Ok(buf[..n].iter().map(|c| c.re / c0).collect())
}

fn spectral_exponent(series: &[f64], opts: &ExponentOptions) -> (f64, f64) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = series.iter().map(|x| Complex64::new(x - mean, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);

    let j_lo = (n / opts.max_lag).max(1);
    let j_hi = (n / opts.min_lag).min(n / 2);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (j_lo..=j_hi)
        .filter_map(|j| {
            let p = buf[j].norm_sqr();
            (p > 0.0).then(|| ((j as f64 / n as f64).ln(), p.ln()))
        })
        .unzip();
    let fit = crate::stats::optim::linear_fit(&xs, &ys);
    let sxx = fit.sxx;
    // log-periodogram ordinates have residual variance pi^2/6
    let stderr = (std::f64::consts::PI.powi(2) / 6.0 / sxx).sqrt();
    (1.0 + fit.slope, stderr)
}

fn direct_exponent(acf: &[f64], n: usize, opts: &ExponentOptions) -> (f64, f64) {
    let lags = log_spaced_lags(opts.min_lag, opts.max_lag, 40);
    let n_f = n as f64;
    let mut nu = 0.5;
    let mut amp = acf[opts.min_lag].max(1e-12) * (opts.min_lag as f64).powf(nu);
    let mut stderr = f64::NAN;
    for _ in 0..8 {
        // sample autocorrelation ~ (rho - v) / (1 - v), v the relative variance of the mean
        let v = if nu < 1.0 {
            (2.0 * amp * n_f.powf(-nu) / ((1.0 - nu) * (2.0 - nu))).clamp(0.0, 0.5)
        } else {
            0.0
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = lags
            .iter()
            .filter_map(|&k| {
                let rho = acf[k] * (1.0 - v) + v;
                (rho > 0.0).then(|| ((k as f64).ln(), rho.ln()))
            })
            .unzip();
        if xs.len() < 3 {
            return (f64::NAN, f64::NAN);
        }
        let fit = crate::stats::optim::linear_fit(&xs, &ys);
        nu = -fit.slope;
        amp = fit.intercept.exp();
        stderr = fit.slope_stderr;
        if !(nu > 0.0 && nu < 1.0) {
            break;
        }
    }
    (nu, stderr)
}

fn log_spaced_lags(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut lags: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    lags.dedup();
    lags
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_moments() {
        let spec = NoiseSpec::white(0.5, 1.0, 1_000_000, 3);
        let xs = generate_white(&spec).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 * (var / n).sqrt());
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n * var);
        assert!(lag1.abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(generate_white(&NoiseSpec::white(1.0, 1.0, 0, 1)).unwrap().is_empty());
        assert!(generate_correlated(&NoiseSpec::correlated(1.0, 0.3, 1.0, 0, 1)).unwrap().is_empty());
        let s = NoiseSpec::correlated(1.0, 0.3, 1.0, 5000, 9);
        assert_eq!(generate_correlated(&s).unwrap(), generate_correlated(&s).unwrap());
        let w = NoiseSpec::white(1.0, 1.0, 100, 9);
        assert_eq!(generate_white(&w).unwrap(), generate_white(&w).unwrap());
    }

    #[test]
    fn exponent_outside_unit_interval_rejected() {
        for nu in [0.0, 1.0, -0.2, 1.5] {
            let s = NoiseSpec::correlated(1.0, nu, 1.0, 100, 1);
            assert!(matches!(generate_correlated(&s), Err(Error::Parameter { .. })));
        }
        assert!(generate_correlated(&NoiseSpec::white(1.0, 1.0, 10, 1)).is_err());
    }

    #[test]
    fn correlated_is_scaled() {
        let xs = generate_correlated(&NoiseSpec::correlated(0.5, 0.4, 0.1, 1 << 12, 2)).unwrap();
        let n = xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 0.1).abs() < 1e-12);
    }

    #[test]
    fn near_white_limit() {
        let xs = generate_correlated(&NoiseSpec::correlated(1.0, 0.99, 1.0, 1 << 18, 5)).unwrap();
        let acf = autocorrelation(&xs).unwrap();
        assert!(acf[10] < 0.05, "acf(10) = {}", acf[10]);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let xs = vec![1.0; MIN_EXPONENT_SERIES];
        assert!(matches!(
            estimate_autocorr_exponent(&xs, &ExponentOptions::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            estimate_autocorr_exponent(&xs[..100], &ExponentOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn white_input_has_no_power_law_regime() {
        let xs = generate_white(&NoiseSpec::white(1.0, 1.0, 1 << 16, 8)).unwrap();
        let est = estimate_autocorr_exponent(&xs, &ExponentOptions::default()).unwrap();
        assert!(!est.power_law_regime);
    }

    #[test]
    fn acf_of_alternating_sequence() {
        let xs: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = autocorrelation(&xs).unwrap();
        assert!((acf[0] - 1.0).abs() < 1e-12);
        assert!((acf[1] + 63.0 / 64.0).abs() < 1e-12);
        assert!((acf[2] - 62.0 / 64.0).abs() < 1e-12);
    }
}
