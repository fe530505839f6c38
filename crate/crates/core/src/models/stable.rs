//! α-stable variates `S(α, β, 0, 1)` by the Chambers–Mallows–Stuck method.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_distr::Exp1;
use std::f64::consts::{FRAC_PI_2, PI};

pub fn check_stable_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::contract(format!("stability index {alpha} outside (0, 2]")));
    }
    if !(-1.0..=1.0).contains(&beta) {
        return Err(Error::contract(format!("skewness {beta} outside [-1, 1]")));
    }
    Ok(())
}

/// One draw; parameters are assumed valid. The characteristic function is
/// `exp(-|t|^α (1 - iβ sgn(t) tan(πα/2)))` for α ≠ 1.
pub fn stable_draw<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = rng.sample(Exp1);
    if alpha == 1.0 {
        let a = FRAC_PI_2 + beta * v;
        return (a * v.tan() - beta * ((FRAC_PI_2 * w * v.cos()) / a).ln()) / FRAC_PI_2;
    }
    let t = beta * (PI * alpha / 2.0).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    let av = alpha * (v + b);
    s * av.sin() / v.cos().powf(1.0 / alpha) * ((v - av).cos() / w).powf((1.0 - alpha) / alpha)
}

pub fn sample_alpha_stable(alpha: f64, beta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_stable_params(alpha, beta)?;
    let mut rng = rng::seeded(seed);
    Ok((0..n).map(|_| stable_draw(alpha, beta, &mut rng)).collect())
}
