//! Discrete-time stochastic-volatility model with self-exciting jumps and a
//! bipower-variation measurement equation.

use super::stable::{check_stable_params, stable_draw};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{lag1_correlation, moments};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const BURN_IN: usize = 200;
pub const H_GUARD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTimeParams {
    pub mu_z: f64,
    pub sigma_z: f64,
    pub d: f64,
    pub beta: f64,
    pub tau: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub sigma_bv: f64,
    pub omega: f64,
    pub rho: f64,
    pub sigma_h: f64,
    pub alpha_stable: f64,
}

impl DiscreteTimeParams {
    pub const PHI_LABELS: [&'static str; 5] = ["mu_z", "sigma_z", "d", "beta", "tau"];
    pub const ETA_LABELS: [&'static str; 5] = ["psi1", "sigma_bv", "omega", "rho", "sigma_h"];

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.mu_z,
            self.sigma_z,
            self.d,
            self.beta,
            self.tau,
            self.psi0,
            self.psi1,
            self.sigma_bv,
            self.omega,
            self.rho,
            self.sigma_h,
        ];
        let ok = fields.iter().all(|v| v.is_finite())
            && self.sigma_z >= 0.0
            && self.sigma_bv > 0.0
            && self.sigma_h > 0.0
            && self.d >= 0.0
            && self.beta >= 0.0
            && self.tau >= 0.0
            && self.beta + self.tau < 1.0
            && self.rho.abs() < 1.0
            && self.alpha_stable > 1.0;
        if !ok {
            return Err(Error::contract(format!("invalid discrete-time parameters {self:?}")));
        }
        check_stable_params(self.alpha_stable, -1.0)
    }

    pub fn h_mean(&self) -> f64 {
        self.omega / (1.0 - self.rho)
    }

    pub fn initial_intensity(&self) -> f64 {
        (self.d / (1.0 - self.beta - self.tau)).clamp(0.0, 1.0)
    }

    /// `δ_t` from `δ_{t-1}` and `ΔN_{t-1}`, clipped to a probability.
    pub fn next_intensity(&self, delta: f64, jumped: bool) -> f64 {
        (self.d + self.beta * delta + if jumped { self.tau } else { 0.0 }).clamp(0.0, 1.0)
    }
}

/// Simulated path after burn-in. `delta[t]` is the probability used for
/// `jumps[t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscretePath {
    pub r: Vec<f64>,
    pub log_bv: Vec<f64>,
    pub h: Vec<f64>,
    pub jumps: Vec<bool>,
    pub delta: Vec<f64>,
    /// Steps where `h` left `±H_GUARD` or became non-finite.
    pub guard_hits: usize,
    /// Values carried out of the burn-in, `(h, δ, ΔN)` before `t = 0`.
    pub initial: (f64, f64, bool),
}

pub fn simulate_discrete(params: &DiscreteTimeParams, t_len: usize, seed: u64) -> Result<DiscretePath> {
    params.validate()?;
    let mut rng = rng::stream(seed, 0);
    let mut h = params.h_mean();
    let mut delta = params.initial_intensity();
    let mut jumped = false;
    let mut path = DiscretePath {
        r: Vec::with_capacity(t_len),
        log_bv: Vec::with_capacity(t_len),
        h: Vec::with_capacity(t_len),
        jumps: Vec::with_capacity(t_len),
        delta: Vec::with_capacity(t_len),
        ..DiscretePath::default()
    };
    for step in 0..BURN_IN + t_len {
        if step == BURN_IN {
            path.initial = (h, delta, jumped);
        }
        if step > 0 {
            delta = params.next_intensity(delta, jumped);
        }
        let eta = stable_draw(params.alpha_stable, -1.0, &mut rng);
        h = params.omega + params.rho * h + params.sigma_h * eta;
        if !h.is_finite() || h.abs() > H_GUARD {
            h = if h.is_nan() { 0.0 } else { h.clamp(-H_GUARD, H_GUARD) };
            path.guard_hits += 1;
        }
        jumped = rng.random::<f64>() < delta;
        let eps: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let zeta: f64 = rng.sample(StandardNormal);
        let jump = if jumped { params.mu_z + params.sigma_z * z } else { 0.0 };
        if step >= BURN_IN {
            path.r.push((h / 2.0).exp() * eps + jump);
            path.log_bv.push(params.psi0 + params.psi1 * h + params.sigma_bv * zeta);
            path.h.push(h);
            path.jumps.push(jumped);
            path.delta.push(delta);
        }
    }
    Ok(path)
}

/// Mean, variance, skewness of log BV levels and of their first differences,
/// then the lag-1 correlation of the levels.
pub fn bv_summaries(log_bv: &[f64]) -> Result<[f64; 7]> {
    if log_bv.len() < 3 {
        return Err(Error::contract("bipower summaries need at least 3 observations"));
    }
    let lv = moments(log_bv);
    let diffs: Vec<f64> = log_bv.windows(2).map(|w| w[1] - w[0]).collect();
    let dv = moments(&diffs);
    if !(lv.var > 0.0) || !(dv.var > 0.0) {
        return Err(Error::Degenerate("log bipower variation".into()));
    }
    let ac = lag1_correlation(log_bv);
    Ok([lv.mean, lv.var, lv.skew, dv.mean, dv.var, dv.skew, ac])
}
