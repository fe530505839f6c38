//! Proper scoring rules for scalar Gaussian mixtures, oriented so that larger
//! is better.

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::stats::{log_sum_exp, norm_cdf, norm_logpdf, norm_pdf};
use serde::{Deserialize, Serialize};

/// Scalar mixture `Σ w_k N(μ_k, σ_k²)` stored as parallel arrays.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl ScalarMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != vars.len() {
            return Err(Error::contract(
                "scalar mixture arrays must be nonempty and equally long",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || vars.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::contract(
                "scalar mixture needs nonnegative weights and positive variances",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::contract(format!("scalar mixture weights sum to {total}")));
        }
        Ok(Self { weights, means, vars })
    }

    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![var])
    }

    pub fn from_gaussian_mixture(g: &GaussianMixture) -> Result<Self> {
        if g.dim() != 1 {
            return Err(Error::contract("scoring needs a one-dimensional mixture"));
        }
        let c = g.components();
        Self::new(
            c.iter().map(|c| c.weight()).collect(),
            c.iter().map(|c| c.mean()[0]).collect(),
            c.iter().map(|c| c.cov()[(0, 0)]).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self.iter().map(|(w, m, v)| w.ln() + norm_logpdf(y, m, v)).collect();
        log_sum_exp(&terms)
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((&w, &m), &v)| (w, m, v))
    }
}

/// `log f(y)`; `-inf` when the density underflows.
pub fn log_score(f: &ScalarMixture, y: f64) -> f64 {
    f.log_density(y)
}

/// `2 f(y) - ∫ f²`.
pub fn quadratic_score(f: &ScalarMixture, y: f64) -> f64 {
    let fy = f.log_density(y).exp();
    let mut sq = 0.0;
    for (wj, mj, vj) in f.iter() {
        for (wk, mk, vk) in f.iter() {
            sq += wj * wk * norm_logpdf(mj, mk, vj + vk).exp();
        }
    }
    2.0 * fy - sq
}

/// `E|m + σZ|` for `Z ~ N(0, 1)`.
fn abs_moment(m: f64, var: f64) -> f64 {
    let s = var.sqrt();
    let u = m / s;
    2.0 * s * norm_pdf(u) + m * (2.0 * norm_cdf(u) - 1.0)
}

/// Negated continuous ranked probability score `-(E|X - y| - ½ E|X - X'|)`.
pub fn crps(f: &ScalarMixture, y: f64) -> f64 {
    let first: f64 = f.iter().map(|(w, m, v)| w * abs_moment(y - m, v)).sum();
    let mut second = 0.0;
    for (wj, mj, vj) in f.iter() {
        for (wk, mk, vk) in f.iter() {
            second += wj * wk * abs_moment(mj - mk, vj + vk);
        }
    }
    -(first - 0.5 * second)
}
