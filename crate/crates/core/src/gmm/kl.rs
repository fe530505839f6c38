use super::{Component, GaussianMixture};
use crate::error::{Error, Result};
use crate::stats::log_sum_exp;
use nalgebra::{DMatrix, DVector};

/// Closed-form `KL(N(mu0, cov0) || N(mu1, cov1))`.
pub fn kl_gaussian(mu0: &DVector<f64>, cov0: &DMatrix<f64>, mu1: &DVector<f64>, cov1: &DMatrix<f64>) -> Result<f64> {
    let d = mu0.len();
    if mu1.len() != d || cov0.shape() != (d, d) || cov1.shape() != (d, d) {
        return Err(Error::contract("kl_gaussian: non-conforming dimensions"));
    }
    // no jitter here: the arguments must be PD as given
    let factor = |c: &DMatrix<f64>| {
        c.clone()
            .cholesky()
            .map(|ch| ch.l())
            .ok_or_else(|| Error::numerical("kl_gaussian: covariance not positive definite"))
    };
    let f = Component::from_factor(1.0, mu0.clone(), cov0.clone(), factor(cov0)?);
    let g = Component::from_factor(1.0, mu1.clone(), cov1.clone(), factor(cov1)?);
    Ok(kl_components(&f, &g))
}

pub(crate) fn kl_components(f: &Component, g: &Component) -> f64 {
    if f.mean() == g.mean() && f.cov() == g.cov() {
        return 0.0;
    }
    let d = f.mean().len() as f64;
    let a = g
        .chol()
        .solve_lower_triangular(f.chol())
        .expect("cached factor is nonsingular");
    let trace = a.norm_squared();
    let diff = g.mean() - f.mean();
    let z = g
        .chol()
        .solve_lower_triangular(&diff)
        .expect("cached factor is nonsingular");
    0.5 * (trace + z.norm_squared() - d + g.log_det() - f.log_det())
}

/// Variational approximation to `KL(f || g)` between Gaussian mixtures:
///
/// `Σ_a π_a ln[ Σ_a' π_a' exp(-KL(f_a||f_a')) / Σ_b ω_b exp(-KL(f_a||g_b)) ]`
///
/// floored at zero. Exact for single components and zero for identical
/// mixtures.
pub fn kl_mixture(f: &GaussianMixture, g: &GaussianMixture) -> Result<f64> {
    check_dims(f, g)?;
    let fc = f.components();
    let gc = g.components();
    Ok(variational(
        &f.weights(),
        &g.weights(),
        |a, b| kl_components(&fc[a], &fc[b]),
        |a, b| kl_components(&fc[a], &gc[b]),
    ))
}

/// `kl_mixture(pool(a, b, γ), b)` for every γ in `gammas`, sharing one table
/// of pairwise component divergences. Each entry equals the direct
/// computation bit for bit.
pub fn kl_pool_curve(a: &GaussianMixture, b: &GaussianMixture, gammas: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let all: Vec<&Component> = a.components().iter().chain(b.components()).collect();
    let n = all.len();
    let offset = a.n_components();
    let mut table = vec![0.0; n * n];
    for (i, ci) in all.iter().enumerate() {
        for (j, cj) in all.iter().enumerate() {
            table[i * n + j] = kl_components(ci, cj);
        }
    }
    gammas
        .iter()
        .map(|&gamma| {
            let (pooled, origin) = GaussianMixture::pool_with_origin(a, b, gamma)?;
            Ok(variational(
                &pooled.weights(),
                &b.weights(),
                |i, j| table[origin[i] * n + origin[j]],
                |i, j| table[origin[i] * n + offset + j],
            ))
        })
        .collect()
}

fn check_dims(f: &GaussianMixture, g: &GaussianMixture) -> Result<()> {
    if f.dim() != g.dim() {
        return Err(Error::contract(format!(
            "kl_mixture: dimensions {} and {} differ",
            f.dim(),
            g.dim()
        )));
    }
    Ok(())
}

fn variational(
    fw: &[f64],
    gw: &[f64],
    kl_ff: impl Fn(usize, usize) -> f64,
    kl_fg: impl Fn(usize, usize) -> f64,
) -> f64 {
    let mut total = 0.0;
    let mut self_terms = vec![0.0; fw.len()];
    let mut cross_terms = vec![0.0; gw.len()];
    for (a, wa) in fw.iter().enumerate() {
        for (b, (t, wb)) in self_terms.iter_mut().zip(fw).enumerate() {
            *t = wb.ln() - kl_ff(a, b);
        }
        for (b, (t, wb)) in cross_terms.iter_mut().zip(gw).enumerate() {
            *t = wb.ln() - kl_fg(a, b);
        }
        total += wa * (log_sum_exp(&self_terms) - log_sum_exp(&cross_terms));
    }
    total.max(0.0)
}
