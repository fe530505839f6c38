//! Uniform prior boxes for the two jump models.

use super::continuous::ContTimeParams;
use super::discrete::DiscreteTimeParams;
use crate::error::{Error, Result};
use crate::fit::AnalyticCdf;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBox {
    pub lo: f64,
    pub hi: f64,
}

impl UniformBox {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "prior box for `{name}` is empty: [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub fn cdf(&self) -> AnalyticCdf {
        AnalyticCdf::Uniform {
            lo: self.lo,
            hi: self.hi,
        }
    }
}

/// `β ~ U(lo, 1 - τ - gap)` given τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledBeta {
    pub lo: f64,
    pub gap: f64,
}

impl CoupledBeta {
    fn check(&self, tau: &UniformBox) -> Result<()> {
        if self.gap >= 0.0 && self.lo >= 0.0 && self.lo < 1.0 - tau.hi - self.gap {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "prior box for `beta` is empty for some tau: lower {} vs 1 - {} - {}",
                self.lo, tau.hi, self.gap
            )))
        }
    }

    pub fn upper(&self, tau: f64) -> f64 {
        1.0 - tau - self.gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuousPrior {
    pub mu_p: UniformBox,
    pub kappa: UniformBox,
    pub alpha: UniformBox,
    pub sigma_v: UniformBox,
    pub rho: UniformBox,
    pub mu_z: UniformBox,
    pub sigma_z: UniformBox,
    pub d: UniformBox,
    pub tau: UniformBox,
    pub beta: CoupledBeta,
}

impl Default for ContinuousPrior {
    fn default() -> Self {
        Self {
            mu_p: UniformBox::new(-0.1, 0.1),
            kappa: UniformBox::new(0.05, 0.5),
            alpha: UniformBox::new(-1.0, 3.0),
            sigma_v: UniformBox::new(0.001, 1.99),
            rho: UniformBox::new(-0.7, 0.0),
            mu_z: UniformBox::new(-1.0, 1.0),
            sigma_z: UniformBox::new(0.0, 3.0),
            d: UniformBox::new(0.01, 0.2),
            tau: UniformBox::new(0.001, 0.2),
            beta: CoupledBeta { lo: 0.5, gap: 0.0 },
        }
    }
}

impl ContinuousPrior {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in self.boxes() {
            b.check(name)?;
        }
        self.beta.check(&self.tau)
    }

    /// Every box except β, whose support depends on τ.
    pub fn boxes(&self) -> [(&'static str, UniformBox); 9] {
        [
            ("mu_z", self.mu_z),
            ("sigma_z", self.sigma_z),
            ("d", self.d),
            ("tau", self.tau),
            ("mu_p", self.mu_p),
            ("kappa", self.kappa),
            ("alpha", self.alpha),
            ("sigma_v", self.sigma_v),
            ("rho", self.rho),
        ]
    }

    pub fn contains(&self, p: &ContTimeParams) -> bool {
        let vals = [
            p.mu_z, p.sigma_z, p.d, p.tau, p.mu_p, p.kappa, p.alpha, p.sigma_v, p.rho,
        ];
        self.boxes().iter().zip(vals).all(|((_, b), v)| b.contains(v))
            && p.beta >= self.beta.lo
            && p.beta < self.beta.upper(p.tau)
    }
}

pub fn prior_sample_continuous(prior: &ContinuousPrior, seed: u64) -> Result<ContTimeParams> {
    prior.validate()?;
    let mut rng = rng::seeded(seed);
    let mu_z = prior.mu_z.draw(&mut rng);
    let sigma_z = prior.sigma_z.draw(&mut rng);
    let d = prior.d.draw(&mut rng);
    let tau = prior.tau.draw(&mut rng);
    let beta = UniformBox::new(prior.beta.lo, prior.beta.upper(tau)).draw(&mut rng);
    Ok(ContTimeParams {
        mu_z,
        sigma_z,
        d,
        beta,
        tau,
        mu_p: prior.mu_p.draw(&mut rng),
        kappa: prior.kappa.draw(&mut rng),
        alpha: prior.alpha.draw(&mut rng),
        sigma_v: prior.sigma_v.draw(&mut rng),
        rho: prior.rho.draw(&mut rng),
    })
}

/// Defaults are illustrative boxes, not values taken from a published study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretePrior {
    pub mu_z: UniformBox,
    pub sigma_z: UniformBox,
    pub d: UniformBox,
    pub tau: UniformBox,
    pub beta: CoupledBeta,
    pub psi1: UniformBox,
    pub sigma_bv: UniformBox,
    pub omega: UniformBox,
    pub rho: UniformBox,
    pub sigma_h: UniformBox,
    pub psi0: f64,
    pub alpha_stable: f64,
}

impl Default for DiscretePrior {
    fn default() -> Self {
        Self {
            mu_z: UniformBox::new(-1.0, 1.0),
            sigma_z: UniformBox::new(0.05, 2.0),
            d: UniformBox::new(0.001, 0.1),
            tau: UniformBox::new(0.001, 0.2),
            beta: CoupledBeta { lo: 0.0, gap: 0.1 },
            psi1: UniformBox::new(0.5, 1.5),
            sigma_bv: UniformBox::new(0.05, 1.0),
            omega: UniformBox::new(-0.1, 0.1),
            rho: UniformBox::new(0.5, 0.95),
            sigma_h: UniformBox::new(0.05, 0.5),
            psi0: 0.0,
            alpha_stable: 1.8,
        }
    }
}

impl DiscretePrior {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in self.boxes() {
            b.check(name)?;
        }
        self.beta.check(&self.tau)?;
        if !(self.alpha_stable > 1.0 && self.alpha_stable <= 2.0) {
            return Err(Error::Config(format!(
                "alpha_stable {} outside (1, 2]",
                self.alpha_stable
            )));
        }
        if self.rho.hi >= 1.0 || self.rho.lo <= -1.0 {
            return Err(Error::Config("rho box must lie inside (-1, 1)".into()));
        }
        Ok(())
    }

    pub fn boxes(&self) -> [(&'static str, UniformBox); 9] {
        [
            ("mu_z", self.mu_z),
            ("sigma_z", self.sigma_z),
            ("d", self.d),
            ("tau", self.tau),
            ("psi1", self.psi1),
            ("sigma_bv", self.sigma_bv),
            ("omega", self.omega),
            ("rho", self.rho),
            ("sigma_h", self.sigma_h),
        ]
    }
}

pub fn prior_sample_discrete(prior: &DiscretePrior, seed: u64) -> Result<DiscreteTimeParams> {
    prior.validate()?;
    let mut rng = rng::seeded(seed);
    let mu_z = prior.mu_z.draw(&mut rng);
    let sigma_z = prior.sigma_z.draw(&mut rng);
    let d = prior.d.draw(&mut rng);
    let tau = prior.tau.draw(&mut rng);
    let beta = UniformBox::new(prior.beta.lo, prior.beta.upper(tau)).draw(&mut rng);
    Ok(DiscreteTimeParams {
        mu_z,
        sigma_z,
        d,
        beta,
        tau,
        psi0: prior.psi0,
        psi1: prior.psi1.draw(&mut rng),
        sigma_bv: prior.sigma_bv.draw(&mut rng),
        omega: prior.omega.draw(&mut rng),
        rho: prior.rho.draw(&mut rng),
        sigma_h: prior.sigma_h.draw(&mut rng),
        alpha_stable: prior.alpha_stable,
    })
}
