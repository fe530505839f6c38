//! Small scalar helpers shared across modules.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile. `u` must lie in (0, 1).
pub fn norm_ppf(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Central moment summary with 1/n normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    /// Non-excess kurtosis (3 for a normal sample).
    pub kurt: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    Moments {
        mean,
        var: m2,
        skew: m3 / m2.powf(1.5),
        kurt: m4 / (m2 * m2),
    }
}

/// Pearson correlation between `x[t]` and `x[t-1]`.
pub fn lag1_correlation(xs: &[f64]) -> f64 {
    let a = &xs[1..];
    let b = &xs[..xs.len() - 1];
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &u in &[1e-10, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let z = norm_ppf(u);
            assert!((norm_cdf(z) - u).abs() <= 1e-10 * u, "u={u}");
        }
        assert_eq!(norm_ppf(0.5), 0.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let m = moments(&[-1.0, 0.0, 1.0]);
        assert_eq!(m.mean, 0.0);
        assert!((m.var - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.skew, 0.0);
        assert!((m.kurt - 1.5).abs() < 1e-12);
    }
}
