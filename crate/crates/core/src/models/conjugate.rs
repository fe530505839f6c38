//! Two-module Gaussian benchmark with closed-form full and cut posteriors.
//!
//! `z_i ~ N(φ, σ_z²)` for `i = 1..n_z` and `w_i ~ N(φ + η, σ_w²)` for
//! `i = 1..n_w`, with independent normal priors on φ and η. The summaries
//! are the sample means `S₁ = z̄` and `S₂ = w̄`.

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugateSpec {
    pub phi_mean: f64,
    pub phi_sd: f64,
    pub eta_mean: f64,
    pub eta_sd: f64,
    pub noise_z: f64,
    pub noise_w: f64,
    pub n_z: usize,
    pub n_w: usize,
}

impl Default for ConjugateSpec {
    fn default() -> Self {
        Self {
            phi_mean: 0.0,
            phi_sd: 1.0,
            eta_mean: 0.0,
            eta_sd: 1.0,
            noise_z: 1.0,
            noise_w: 1.0,
            n_z: 20,
            n_w: 20,
        }
    }
}

/// Normal distribution summarised by mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub var: f64,
}

impl Normal1 {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Exact posteriors for one observed `(z̄, w̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePosteriors {
    /// Joint full posterior of `(φ, η)`.
    pub full_mean: [f64; 2],
    pub full_cov: [[f64; 2]; 2],
    /// `p(φ | z̄)`.
    pub cut_phi: Normal1,
    /// `η | φ, w̄` has mean `eta_intercept + eta_slope * φ` and variance `eta_cond_var`.
    pub eta_intercept: f64,
    pub eta_slope: f64,
    pub eta_cond_var: f64,
}

impl ConjugatePosteriors {
    pub fn full_phi(&self) -> Normal1 {
        Normal1 {
            mean: self.full_mean[0],
            var: self.full_cov[0][0],
        }
    }

    pub fn full_eta(&self) -> Normal1 {
        Normal1 {
            mean: self.full_mean[1],
            var: self.full_cov[1][1],
        }
    }

    /// η-marginal of the cut posterior `p(φ|z̄) p(η|φ,w̄)`.
    pub fn cut_eta(&self) -> Normal1 {
        Normal1 {
            mean: self.eta_intercept + self.eta_slope * self.cut_phi.mean,
            var: self.eta_cond_var + self.eta_slope.powi(2) * self.cut_phi.var,
        }
    }

    /// Exact `KL(p(φ|z̄,w̄) || p(φ|z̄))`.
    pub fn conflict_kl(&self) -> f64 {
        let f = self.full_phi();
        let g = self.cut_phi;
        0.5 * (f.var / g.var + (f.mean - g.mean).powi(2) / g.var - 1.0 + (g.var / f.var).ln())
    }
}

impl ConjugateSpec {
    pub fn validate(&self) -> Result<()> {
        let sds = [self.phi_sd, self.eta_sd, self.noise_z, self.noise_w];
        if sds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("conjugate model: all sds must be positive".into()));
        }
        if self.n_z == 0 || self.n_w == 0 {
            return Err(Error::Config("conjugate model: sample sizes must be >= 1".into()));
        }
        Ok(())
    }

    fn precisions(&self) -> (f64, f64, f64, f64) {
        (
            self.phi_sd.powi(-2),
            self.eta_sd.powi(-2),
            self.n_z as f64 / self.noise_z.powi(2),
            self.n_w as f64 / self.noise_w.powi(2),
        )
    }

    /// The exact joint of `(φ, η, z̄, w̄)`, a single Gaussian.
    pub fn exact_joint(&self) -> Result<GaussianMixture> {
        self.validate()?;
        let vp = self.phi_sd.powi(2);
        let ve = self.eta_sd.powi(2);
        let vz = vp + self.noise_z.powi(2) / self.n_z as f64;
        let vw = vp + ve + self.noise_w.powi(2) / self.n_w as f64;
        let mean = DVector::from_vec(vec![
            self.phi_mean,
            self.eta_mean,
            self.phi_mean,
            self.phi_mean + self.eta_mean,
        ]);
        #[rustfmt::skip]
        let cov = DMatrix::from_row_slice(4, 4, &[
            vp,  0.0, vp,  vp,
            0.0, ve,  0.0, ve,
            vp,  0.0, vz,  vp,
            vp,  ve,  vp,  vw,
        ]);
        let labels = ["phi", "eta", "zbar", "wbar"].map(String::from).to_vec();
        GaussianMixture::gaussian(labels, mean, cov)
    }

    /// Prior-predictive standard deviation of `w̄`.
    pub fn wbar_prior_sd(&self) -> f64 {
        (self.phi_sd.powi(2) + self.eta_sd.powi(2) + self.noise_w.powi(2) / self.n_w as f64).sqrt()
    }
}

/// Draws the raw observations and returns their means `(z̄, w̄)`.
pub fn conjugate_simulate(spec: &ConjugateSpec, phi: f64, eta: f64, seed: u64) -> Result<(f64, f64)> {
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    let zbar = (0..spec.n_z)
        .map(|_| phi + spec.noise_z * rng.sample::<f64, _>(StandardNormal))
        .sum::<f64>()
        / spec.n_z as f64;
    let wbar = (0..spec.n_w)
        .map(|_| phi + eta + spec.noise_w * rng.sample::<f64, _>(StandardNormal))
        .sum::<f64>()
        / spec.n_w as f64;
    Ok((zbar, wbar))
}

pub fn conjugate_posteriors(spec: &ConjugateSpec, zbar: f64, wbar: f64) -> Result<ConjugatePosteriors> {
    spec.validate()?;
    let (p_phi, p_eta, l_z, l_w) = spec.precisions();
    // joint precision of (φ, η) and linear term
    let q = [[p_phi + l_z + l_w, l_w], [l_w, p_eta + l_w]];
    let b = [
        p_phi * spec.phi_mean + l_z * zbar + l_w * wbar,
        p_eta * spec.eta_mean + l_w * wbar,
    ];
    let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
    let cov = [[q[1][1] / det, -q[0][1] / det], [-q[1][0] / det, q[0][0] / det]];
    let mean = [cov[0][0] * b[0] + cov[0][1] * b[1], cov[1][0] * b[0] + cov[1][1] * b[1]];
    let cut_prec = p_phi + l_z;
    let eta_prec = p_eta + l_w;
    Ok(ConjugatePosteriors {
        full_mean: mean,
        full_cov: cov,
        cut_phi: Normal1 {
            mean: (p_phi * spec.phi_mean + l_z * zbar) / cut_prec,
            var: 1.0 / cut_prec,
        },
        eta_intercept: (p_eta * spec.eta_mean + l_w * wbar) / eta_prec,
        eta_slope: -l_w / eta_prec,
        eta_cond_var: 1.0 / eta_prec,
    })
}
