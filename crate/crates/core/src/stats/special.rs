//! Special functions not provided by `statrs`.

/// Exponential integral `E1(x) = int_x^inf e^-t / t dt` for `x > 0`.
pub fn exp_int_e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NAN;
    }
    if x < 1.0 {
        // power series: -gamma - ln x + sum_k (-1)^(k+1) x^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        scaled_continued_fraction(x) * (-x).exp()
    }
}

/// `e^x E1(x)` by the modified Lentz continued fraction, for `x >= 1`.
fn scaled_continued_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// `e^x E1(x)`, stable for large `x`.
pub fn scaled_exp_int_e1(x: f64) -> f64 {
    if x < 1.0 {
        x.exp() * exp_int_e1(x)
    } else {
        scaled_continued_fraction(x)
    }
}

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
