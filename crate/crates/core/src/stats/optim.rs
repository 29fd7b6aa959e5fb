//! Small numerical helpers: ordinary least squares, golden-section search,
//! numerical Hessians.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    /// Sum of squared deviations of the regressor.
    pub sxx: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LinearFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        sxx,
    }
}

/// Minimizes a unimodal `f` on `[a, b]`. Returns `(argmin, min)`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + c.abs() + d.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
pub fn numeric_hessian<const N: usize>(f: impl Fn(&[f64; N]) -> f64, x: &[f64; N], h: &[f64; N]) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    let f0 = f(x);
    for i in 0..N {
        for j in i..N {
            let v = if i == j {
                let mut p = *x;
                let mut m = *x;
                p[i] += h[i];
                m[i] -= h[i];
                (f(&p) - 2.0 * f0 + f(&m)) / (h[i] * h[i])
            } else {
                let shifted = |si: f64, sj: f64| {
                    let mut q = *x;
                    q[i] += si * h[i];
                    q[j] += sj * h[j];
                    f(&q)
                };
                (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                    / (4.0 * h[i] * h[j])
            };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Inverse of a symmetric 3x3 matrix, `None` when singular.
pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    let inv = [
        [
            c00 / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            c01 / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            c02 / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ];
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 1.5).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.3) * (x - 0.3) + 1.0, -2.0, 5.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_of_diagonal() {
        let m = [[2.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 0.5]];
        let inv = invert3(&m).unwrap();
        assert_eq!(inv[0][0], 0.5);
        assert_eq!(inv[1][1], 0.25);
        assert_eq!(inv[2][2], 2.0);
        let h = numeric_hessian(|x: &[f64; 2]| x[0] * x[0] + 3.0 * x[0] * x[1], &[1.0, 1.0], &[1e-3, 1e-3]);
        assert!((h[0][0] - 2.0).abs() < 1e-6 && (h[0][1] - 3.0).abs() < 1e-6);
    }
}
