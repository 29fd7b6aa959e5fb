//! Distribution fitting, goodness of fit and scaling-law regression.

pub mod fits;
pub mod ks;
pub mod optim;
pub mod size_variance;
pub mod special;

pub use fits::{
    eval_scale_mixture_pdf, fit_gaussian, fit_laplace, fit_lognormal, fit_pareto_tail, fit_scale_mixture,
    fit_family, fit_subbotin, subbotin_pdf, FitFamily, FitOptions, FitParams, FitResult, GofMethod, GoodnessOfFit,
    ParamEstimate, TruncationRule,
};
pub use size_variance::{size_variance_regression, SizeBin, SizeVarianceResult};

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Excess kurtosis (0 for a Gaussian, 3 for a Laplace law).
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (mean, var) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / xs.len() as f64;
    m4 / (var * var) - 3.0
}

/// Median of a sample (average of the two central values for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_median(&v)
}

pub(crate) fn sorted_median(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, p)
}

pub(crate) fn sorted_quantile(v: &[f64], p: f64) -> f64 {
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.len() as f64;
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        let (m, v) = mean_var(&[1.0, 3.0]);
        assert_eq!((m, v), (2.0, 1.0));
    }
}
