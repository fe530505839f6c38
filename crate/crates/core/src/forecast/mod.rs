//! Bootstrap particle filtering of the discrete-time model and one-step-ahead
//! forecast densities for daily returns and log bipower variation.

mod score;

pub use score::{crps, log_score, quadratic_score, ScalarMixture};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::models::{stable_draw, DiscreteTimeParams, BURN_IN, H_GUARD};
use crate::rng::{self, derive_seed, SimRng};
use crate::stats::{log_sum_exp, norm_logpdf};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_PARTICLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Multinomial,
    Systematic,
}

/// Which measurement equations enter the particle weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurements {
    Both,
    ReturnsOnly,
    BipowerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    pub particles: usize,
    /// Unweighted propagation steps from `h = ω/(1-ρ)` before the first
    /// observation, matching the simulator's burn-in.
    pub burn_in: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    pub ess_fraction: f64,
    pub resampling: Resampling,
    pub measurements: Measurements,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            particles: 5000,
            burn_in: BURN_IN,
            ess_fraction: 0.5,
            resampling: Resampling::Multinomial,
            measurements: Measurements::Both,
        }
    }
}

impl FilterOptions {
    fn validate(&self) -> Result<()> {
        if self.particles < MIN_PARTICLES {
            return Err(Error::contract(format!(
                "{} particles requested, at least {MIN_PARTICLES} required",
                self.particles
            )));
        }
        if !(0.0..=1.0).contains(&self.ess_fraction) {
            return Err(Error::contract("ess_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weighted particles for `(h_t, ΔN_t, δ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub h: Vec<f64>,
    pub jumped: Vec<bool>,
    pub delta: Vec<f64>,
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Filter output at one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub mean_h: f64,
    pub var_h: f64,
    /// Before any resampling at this step.
    pub ess: f64,
    pub resampled: bool,
    /// `log p̂(y_t | y_{1:t-1})`.
    pub log_lik: f64,
}

/// A bootstrap filter for one parameter draw, advanced one observation at a
/// time.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    params: DiscreteTimeParams,
    opts: FilterOptions,
    cloud: ParticleCloud,
    propagate: SimRng,
    resample: SimRng,
    guard_hits: usize,
    trace: Vec<FilterStep>,
}

impl ParticleFilter {
    pub fn new(params: DiscreteTimeParams, opts: FilterOptions, seed: u64) -> Result<Self> {
        params.validate()?;
        opts.validate()?;
        let p = opts.particles;
        let mut f = Self {
            params,
            opts,
            cloud: ParticleCloud {
                h: vec![params.h_mean(); p],
                jumped: vec![false; p],
                delta: vec![params.initial_intensity(); p],
                weights: vec![1.0 / p as f64; p],
                ess: p as f64,
            },
            propagate: rng::stream(seed, 0),
            resample: rng::stream(seed, 1),
            guard_hits: 0,
            trace: Vec::new(),
        };
        for step in 0..opts.burn_in {
            f.propagate_all(step > 0);
        }
        Ok(f)
    }

    pub fn cloud(&self) -> &ParticleCloud {
        &self.cloud
    }

    pub fn params(&self) -> &DiscreteTimeParams {
        &self.params
    }

    pub fn trace(&self) -> &[FilterStep] {
        &self.trace
    }

    pub fn guard_hits(&self) -> usize {
        self.guard_hits
    }

    pub fn log_likelihood(&self) -> f64 {
        self.trace.iter().map(|s| s.log_lik).sum()
    }

    fn propagate_all(&mut self, update_intensity: bool) {
        let p = self.params;
        let c = &mut self.cloud;
        for i in 0..c.h.len() {
            if update_intensity {
                c.delta[i] = p.next_intensity(c.delta[i], c.jumped[i]);
            }
            let (h, hit) = step_h(&p, c.h[i], &mut self.propagate);
            c.h[i] = h;
            self.guard_hits += hit as usize;
            c.jumped[i] = self.propagate.random::<f64>() < c.delta[i];
        }
    }

    fn log_measurement(&self, i: usize, r: f64, log_bv: f64) -> f64 {
        let p = &self.params;
        let h = self.cloud.h[i];
        let lr = || {
            let (m, v) = if self.cloud.jumped[i] {
                (p.mu_z, h.exp() + p.sigma_z * p.sigma_z)
            } else {
                (0.0, h.exp())
            };
            norm_logpdf(r, m, v)
        };
        let lb = || norm_logpdf(log_bv, p.psi0 + p.psi1 * h, p.sigma_bv * p.sigma_bv);
        match self.opts.measurements {
            Measurements::Both => lr() + lb(),
            Measurements::ReturnsOnly => lr(),
            Measurements::BipowerOnly => lb(),
        }
    }

    /// Propagates to the next time point and weights by `(r, log_bv)`.
    pub fn step(&mut self, r: f64, log_bv: f64) -> Result<FilterStep> {
        let t = self.trace.len();
        // the first observed step continues the burn-in chain
        self.propagate_all(self.opts.burn_in > 0 || t > 0);
        let n = self.cloud.len();
        let logw: Vec<f64> = (0..n)
            .map(|i| self.cloud.weights[i].ln() + self.log_measurement(i, r, log_bv))
            .collect();
        let total = log_sum_exp(&logw);
        if !total.is_finite() {
            let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::numerical(format!(
                "all particle weights are zero at step {t} (max log-weight {max})"
            )));
        }
        for (w, lw) in self.cloud.weights.iter_mut().zip(&logw) {
            *w = (lw - total).exp();
        }
        let ess = 1.0 / self.cloud.weights.iter().map(|w| w * w).sum::<f64>();
        let mean_h: f64 = self.cloud.weights.iter().zip(&self.cloud.h).map(|(w, h)| w * h).sum();
        let var_h: f64 = self
            .cloud
            .weights
            .iter()
            .zip(&self.cloud.h)
            .map(|(w, h)| w * (h - mean_h).powi(2))
            .sum();
        let resampled = ess < self.opts.ess_fraction * n as f64;
        if resampled {
            self.resample_cloud();
        } else {
            self.cloud.ess = ess;
        }
        let out = FilterStep {
            mean_h,
            var_h,
            ess,
            resampled,
            log_lik: total,
        };
        self.trace.push(out);
        Ok(out)
    }

    fn resample_cloud(&mut self) {
        let n = self.cloud.len();
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.cloud.weights {
            acc += w;
            cum.push(acc);
        }
        let pick = |u: f64| cum.partition_point(|&c| c < u * acc).min(n - 1);
        let idx: Vec<usize> = match self.opts.resampling {
            Resampling::Multinomial => (0..n).map(|_| pick(self.resample.random::<f64>())).collect(),
            Resampling::Systematic => {
                let u0: f64 = self.resample.random();
                (0..n).map(|i| pick((i as f64 + u0) / n as f64)).collect()
            }
        };
        let c = &self.cloud;
        self.cloud = ParticleCloud {
            h: idx.iter().map(|&i| c.h[i]).collect(),
            jumped: idx.iter().map(|&i| c.jumped[i]).collect(),
            delta: idx.iter().map(|&i| c.delta[i]).collect(),
            weights: vec![1.0 / n as f64; n],
            ess: n as f64,
        };
    }

    /// Adds this filter's contribution to a one-step forecast: each particle
    /// is moved one step in `h` and split into its no-jump and jump branches.
    fn forecast_into(&self, scale: f64, rng: &mut SimRng, out: &mut ForecastDensity) {
        let p = &self.params;
        let c = &self.cloud;
        for i in 0..c.len() {
            let delta = p.next_intensity(c.delta[i], c.jumped[i]);
            let (h, _) = step_h(p, c.h[i], rng);
            let w = scale * c.weights[i];
            let bv_mean = p.psi0 + p.psi1 * h;
            let bv_var = p.sigma_bv * p.sigma_bv;
            if delta < 1.0 {
                out.push(w * (1.0 - delta), 0.0, h.exp(), bv_mean, bv_var);
            }
            if delta > 0.0 {
                out.push(w * delta, p.mu_z, h.exp() + p.sigma_z * p.sigma_z, bv_mean, bv_var);
            }
        }
    }
}

fn step_h(p: &DiscreteTimeParams, h: f64, rng: &mut SimRng) -> (f64, bool) {
    let eta = stable_draw(p.alpha_stable, -1.0, rng);
    let h = p.omega + p.rho * h + p.sigma_h * eta;
    if !h.is_finite() || h.abs() > H_GUARD {
        (if h.is_nan() { 0.0 } else { h.clamp(-H_GUARD, H_GUARD) }, true)
    } else {
        (h, false)
    }
}

/// Mixture over `(r, log BV)` with diagonal bivariate normal components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastDensity {
    pub weights: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub var_r: Vec<f64>,
    pub mean_bv: Vec<f64>,
    pub var_bv: Vec<f64>,
}

impl ForecastDensity {
    fn push(&mut self, w: f64, mr: f64, vr: f64, mb: f64, vb: f64) {
        if w > 0.0 {
            self.weights.push(w);
            self.mean_r.push(mr);
            self.var_r.push(vr);
            self.mean_bv.push(mb);
            self.var_bv.push(vb);
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn log_density(&self, r: f64, log_bv: f64) -> f64 {
        let terms: Vec<f64> = (0..self.len())
            .map(|k| {
                self.weights[k].ln()
                    + norm_logpdf(r, self.mean_r[k], self.var_r[k])
                    + norm_logpdf(log_bv, self.mean_bv[k], self.var_bv[k])
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn marginal_r(&self) -> Result<ScalarMixture> {
        ScalarMixture::new(self.weights.clone(), self.mean_r.clone(), self.var_r.clone())
    }

    pub fn marginal_bv(&self) -> Result<ScalarMixture> {
        ScalarMixture::new(self.weights.clone(), self.mean_bv.clone(), self.var_bv.clone())
    }

    /// As a general mixture with labels `r` and `log_bv`.
    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        let parts = (0..self.len())
            .map(|k| {
                (
                    self.weights[k],
                    DVector::from_vec(vec![self.mean_r[k], self.mean_bv[k]]),
                    DMatrix::from_diagonal(&DVector::from_vec(vec![self.var_r[k], self.var_bv[k]])),
                )
            })
            .collect();
        GaussianMixture::new(vec!["r".into(), "log_bv".into()], parts)
    }

    fn normalise(mut self) -> Result<Self> {
        let total: f64 = self.weights.iter().sum();
        if self.is_empty() || !(total > 0.0) {
            return Err(Error::numerical("forecast mixture has no mass"));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(self)
    }
}

/// Runs one filter per parameter draw over the observations. Draw `s` uses a
/// seed derived from `(seed, s)`.
pub fn bootstrap_filter(
    draws: &[DiscreteTimeParams],
    r: &[f64],
    log_bv: &[f64],
    opts: &FilterOptions,
    seed: u64,
) -> Result<Vec<ParticleFilter>> {
    if draws.is_empty() {
        return Err(Error::contract("no parameter draws to filter"));
    }
    if r.len() != log_bv.len() {
        return Err(Error::contract("return and bipower series differ in length"));
    }
    draws
        .par_iter()
        .enumerate()
        .map(|(s, p)| {
            let mut f = ParticleFilter::new(*p, *opts, derive_seed(seed, s as u64))?;
            for (t, (&rt, &bt)) in r.iter().zip(log_bv).enumerate() {
                f.step(rt, bt).map_err(|e| match e {
                    Error::Numerical(m) => Error::numerical(format!("draw {s}, observation {t}: {m}")),
                    other => other,
                })?;
            }
            Ok(f)
        })
        .collect()
}

/// Equal-weight average over filters of their one-step predictive mixtures.
pub fn one_step_forecast(filters: &[ParticleFilter], seed: u64) -> Result<ForecastDensity> {
    if filters.is_empty() || filters.iter().any(|f| f.cloud.is_empty()) {
        return Err(Error::contract("forecast needs at least one nonempty particle cloud"));
    }
    let scale = 1.0 / filters.len() as f64;
    let mut out = ForecastDensity::default();
    for (s, f) in filters.iter().enumerate() {
        let mut rng = rng::seeded(derive_seed(seed, s as u64));
        f.forecast_into(scale, &mut rng, &mut out);
    }
    out.normalise()
}

/// Which scores to compute; QS and CRPS cost `O(K²)` in the mixture size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSet {
    pub log: bool,
    pub quadratic: bool,
    pub crps: bool,
}

impl Default for ScoreSet {
    fn default() -> Self {
        Self {
            log: true,
            quadratic: true,
            crps: true,
        }
    }
}

impl ScoreSet {
    pub fn log_only() -> Self {
        Self {
            log: true,
            quadratic: false,
            crps: false,
        }
    }
}

/// Scores for one outcome variable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub ls: Option<f64>,
    pub qs: Option<f64>,
    pub crps: Option<f64>,
}

impl Scores {
    fn compute(f: &ScalarMixture, y: f64, which: ScoreSet) -> Self {
        Self {
            ls: which.log.then(|| log_score(f, y)),
            qs: which.quadratic.then(|| quadratic_score(f, y)),
            crps: which.crps.then(|| crps(f, y)),
        }
    }

    fn mean(rows: &[Self]) -> Self {
        let avg = |get: fn(&Self) -> Option<f64>| {
            let v: Option<Vec<f64>> = rows.iter().map(get).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            ls: avg(|s| s.ls),
            qs: avg(|s| s.qs),
            crps: avg(|s| s.crps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScores {
    pub t: usize,
    pub r: Scores,
    pub log_bv: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub steps: Vec<StepScores>,
    pub mean_r: Scores,
    pub mean_log_bv: Scores,
}

/// Seed of the forecast made before holdout observation `k`.
pub fn forecast_seed(seed: u64, k: usize) -> u64 {
    derive_seed(derive_seed(seed, u64::MAX), k as u64)
}

/// Filters the first `r.len() - holdout` observations with the parameter
/// draws held fixed, then for each holdout observation forecasts it, scores
/// the forecast, and assimilates it.
pub fn rolling_evaluation(
    draws: &[DiscreteTimeParams],
    r: &[f64],
    log_bv: &[f64],
    holdout: usize,
    opts: &FilterOptions,
    which: ScoreSet,
    seed: u64,
) -> Result<ScoreTable> {
    if holdout == 0 || holdout > r.len() {
        return Err(Error::contract(format!(
            "holdout {holdout} must lie in 1..={}",
            r.len()
        )));
    }
    if r.len() != log_bv.len() {
        return Err(Error::contract("return and bipower series differ in length"));
    }
    let train = r.len() - holdout;
    let mut filters = bootstrap_filter(draws, &r[..train], &log_bv[..train], opts, seed)?;
    let mut steps = Vec::with_capacity(holdout);
    for k in 0..holdout {
        let t = train + k;
        let f = one_step_forecast(&filters, forecast_seed(seed, k))?;
        steps.push(StepScores {
            t,
            r: Scores::compute(&f.marginal_r()?, r[t], which),
            log_bv: Scores::compute(&f.marginal_bv()?, log_bv[t], which),
        });
        if k + 1 < holdout {
            filters
                .par_iter_mut()
                .map(|f| f.step(r[t], log_bv[t]).map(|_| ()))
                .collect::<Result<()>>()
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::numerical(format!("observation {t}: {m}")),
                    other => other,
                })?;
        }
    }
    let rs: Vec<Scores> = steps.iter().map(|s| s.r).collect();
    let bs: Vec<Scores> = steps.iter().map(|s| s.log_bv).collect();
    Ok(ScoreTable {
        mean_r: Scores::mean(&rs),
        mean_log_bv: Scores::mean(&bs),
        steps,
    })
}

#[cfg(test)]
mod tests;
