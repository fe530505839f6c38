//! Continuous-time jump-diffusion with self-exciting jumps, simulated by an
//! Euler scheme and downsampled to intraday returns.

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{lag1_correlation, moments};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub const BV_FLOOR: f64 = 1e-12;

/// `φ = (μ_z, σ_z, d, β, τ)` governs the jumps, `η = (μ_p, κ, α, σ_v, ρ)`
/// the returns and log-volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContTimeParams {
    pub mu_z: f64,
    pub sigma_z: f64,
    pub d: f64,
    pub beta: f64,
    pub tau: f64,
    pub mu_p: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub sigma_v: f64,
    pub rho: f64,
}

impl ContTimeParams {
    pub const PHI_LABELS: [&'static str; 5] = ["mu_z", "sigma_z", "d", "beta", "tau"];
    pub const ETA_LABELS: [&'static str; 5] = ["mu_p", "kappa", "alpha", "sigma_v", "rho"];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.mu_z,
            self.sigma_z,
            self.d,
            self.beta,
            self.tau,
            self.mu_p,
            self.kappa,
            self.alpha,
            self.sigma_v,
            self.rho,
        ]
    }

    /// Structural requirements for simulation. The prior box is stricter.
    pub fn validate(&self) -> Result<()> {
        let ok = self.to_vec().iter().all(|v| v.is_finite())
            && self.sigma_z >= 0.0
            && self.sigma_v > 0.0
            && (-1.0..=1.0).contains(&self.rho)
            && self.d >= 0.0
            && self.tau >= 0.0
            && self.beta >= 0.0
            && self.beta + self.tau < 1.0
            && self.kappa > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid continuous-time parameters {self:?}")))
        }
    }

    /// Long-run jump intensity `d / (1 - β - τ)`.
    pub fn stationary_intensity(&self) -> f64 {
        self.d / (1.0 - self.beta - self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContTimeSizes {
    pub days: usize,
    pub intraday: usize,
    pub euler_steps: usize,
}

impl Default for ContTimeSizes {
    fn default() -> Self {
        Self {
            days: 1750,
            intraday: 78,
            euler_steps: 780,
        }
    }
}

impl ContTimeSizes {
    pub fn desk() -> Self {
        Self {
            days: 250,
            intraday: 20,
            euler_steps: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days < 3 || self.intraday < 2 {
            return Err(Error::contract("need at least 3 days and 2 intraday returns"));
        }
        if self.euler_steps == 0 || !self.euler_steps.is_multiple_of(self.intraday) {
            return Err(Error::contract(format!(
                "Euler steps {} must be a positive multiple of intraday returns {}",
                self.euler_steps, self.intraday
            )));
        }
        Ok(())
    }
}

/// `days × m` intraday returns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IntradayPanel {
    m: usize,
    returns: Vec<f64>,
    /// Jumps per day, kept for diagnostics.
    pub jump_counts: Vec<u32>,
}

impl IntradayPanel {
    pub fn new(m: usize, returns: Vec<f64>) -> Result<Self> {
        if m < 2 || returns.is_empty() || !returns.len().is_multiple_of(m) {
            return Err(Error::contract("panel needs m >= 2 and a whole number of days"));
        }
        if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite intraday return on day {}, slot {}",
                i / m,
                i % m
            )));
        }
        let days = returns.len() / m;
        Ok(Self {
            m,
            returns,
            jump_counts: vec![0; days],
        })
    }

    pub fn days(&self) -> usize {
        self.returns.len() / self.m
    }

    pub fn intraday(&self) -> usize {
        self.m
    }

    pub fn day(&self, t: usize) -> &[f64] {
        &self.returns[t * self.m..(t + 1) * self.m]
    }

    pub fn daily_return(&self, t: usize) -> f64 {
        self.day(t).iter().sum()
    }

    pub fn daily_returns(&self) -> Vec<f64> {
        (0..self.days()).map(|t| self.daily_return(t)).collect()
    }

    pub fn log_bv(&self) -> Vec<f64> {
        (0..self.days()).map(|t| bv(self, t).max(BV_FLOOR).ln()).collect()
    }
}

pub fn rv(panel: &IntradayPanel, t: usize) -> f64 {
    panel.day(t).iter().map(|r| r * r).sum()
}

pub fn bv(panel: &IntradayPanel, t: usize) -> f64 {
    let r = panel.day(t);
    let m = r.len() as f64;
    FRAC_PI_2 * (m / (m - 1.0)) * r.windows(2).map(|w| (w[0] * w[1]).abs()).sum::<f64>()
}

pub fn jv(panel: &IntradayPanel, t: usize) -> f64 {
    (rv(panel, t) - bv(panel, t)).max(0.0)
}

/// The five jump summaries and the number of days whose BV hit the floor.
pub fn jump_summaries(panel: &IntradayPanel) -> ([f64; 5], usize) {
    let days = panel.days();
    let tf = days as f64;
    let jvs: Vec<f64> = (0..days).map(|t| jv(panel, t)).collect();
    let s11 = (0..days)
        .map(|t| sign(panel.daily_return(t)) * jvs[t].sqrt())
        .sum::<f64>()
        / tf;
    let mean = jvs.iter().sum::<f64>() / tf;
    let s12 = jvs.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / tf;
    let s13 = jvs.windows(2).map(|w| (w[1] - mean) * (w[0] - mean)).sum::<f64>() / tf;
    let mut floored = 0;
    let log_bv: Vec<f64> = (0..days)
        .map(|t| {
            let b = bv(panel, t);
            if b <= 0.0 {
                floored += 1;
            }
            (b + if b <= 0.0 { BV_FLOOR } else { 0.0 }).ln()
        })
        .collect();
    let m = moments(&log_bv);
    ([s11, s12, s13, m.skew, m.kurt], floored)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean, variance, skewness, kurtosis of daily returns and the lag-1
/// autocorrelation of their absolute values.
pub fn return_summaries(r: &[f64]) -> Result<[f64; 5]> {
    if r.len() < 3 {
        return Err(Error::contract("return summaries need at least 3 observations"));
    }
    let m = moments(r);
    if !(m.var > 0.0) {
        return Err(Error::Degenerate("daily returns".into()));
    }
    let abs: Vec<f64> = r.iter().map(|x| x.abs()).collect();
    let ac = lag1_correlation(&abs);
    if !ac.is_finite() {
        return Err(Error::Degenerate("absolute daily returns".into()));
    }
    Ok([m.mean, m.var, m.skew, m.kurt, ac])
}

/// Euler simulation with step `1/I`, summed to `M` returns per day.
///
/// The intensity follows `dδ = (d - (1-β)δ) dt + τ dN`, started at its
/// stationary mean and carried across days; `V` starts at `α`. Diffusion and
/// jump shocks come from separate streams, so switching jumps off leaves the
/// diffusion part bitwise unchanged.
pub fn simulate_continuous(params: &ContTimeParams, sizes: &ContTimeSizes, seed: u64) -> Result<IntradayPanel> {
    params.validate()?;
    sizes.validate()?;
    let ContTimeSizes {
        days,
        intraday: m,
        euler_steps: steps,
    } = *sizes;
    let per_return = steps / m;
    let dt = 1.0 / steps as f64;
    let sq = dt.sqrt();
    let orth = (1.0 - params.rho * params.rho).sqrt();
    let mut diffusion = rng::stream(seed, 0);
    let mut jumps = rng::stream(seed, 1);
    let mut v = params.alpha;
    let mut delta = params.stationary_intensity();
    let mut returns = Vec::with_capacity(days * m);
    let mut counts = vec![0u32; days];
    for count in counts.iter_mut() {
        for _ in 0..m {
            let mut acc = 0.0;
            for _ in 0..per_return {
                let ep: f64 = diffusion.sample(StandardNormal);
                let ev: f64 = diffusion.sample(StandardNormal);
                let p_jump = delta * dt;
                if !(p_jump <= 1.0) {
                    return Err(Error::numerical(format!("jump intensity overflow: δ/I = {p_jump}")));
                }
                let jumped = jumps.random::<f64>() < p_jump;
                acc += params.mu_p * dt + (v / 2.0).exp() * ep * sq;
                if jumped {
                    let z: f64 = jumps.sample(StandardNormal);
                    acc += params.mu_z + params.sigma_z * z;
                    *count += 1;
                }
                v += params.kappa * (params.alpha - v) * dt + params.sigma_v * sq * (params.rho * ep + orth * ev);
                delta += (params.d - (1.0 - params.beta) * delta) * dt + if jumped { params.tau } else { 0.0 };
            }
            returns.push(acc);
        }
    }
    let mut panel = IntradayPanel::new(m, returns)?;
    panel.jump_counts = counts;
    Ok(panel)
}
