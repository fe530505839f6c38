//! Built-in generative models, their summary statistics, and prior-predictive
//! table generation.

mod conjugate;
mod continuous;
mod discrete;
mod prior;
mod stable;

pub use conjugate::{conjugate_posteriors, conjugate_simulate, ConjugatePosteriors, ConjugateSpec, Normal1};
pub use continuous::{
    bv, jump_summaries, jv, return_summaries, rv, simulate_continuous, ContTimeParams, ContTimeSizes, IntradayPanel,
    BV_FLOOR,
};
pub use discrete::{bv_summaries, simulate_discrete, DiscretePath, DiscreteTimeParams, BURN_IN, H_GUARD};
pub use prior::{
    prior_sample_continuous, prior_sample_discrete, ContinuousPrior, CoupledBeta, DiscretePrior, UniformBox,
};
pub use stable::{sample_alpha_stable, stable_draw};

use crate::error::{Error, Result};
use crate::fit::{AnalyticCdf, SimTable};
use crate::rng::{self, derive_seed};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Column names of the four blocks, in table order `φ, η, S₁, S₂`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocks {
    pub phi: Vec<String>,
    pub eta: Vec<String>,
    pub s1: Vec<String>,
    pub s2: Vec<String>,
}

impl Blocks {
    fn from_strs(phi: &[&str], eta: &[&str], s1: &[&str], s2: &[&str]) -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            phi: own(phi),
            eta: own(eta),
            s1: own(s1),
            s2: own(s2),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        [&self.phi, &self.eta, &self.s1, &self.s2]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.phi.len() + self.eta.len()
    }

    pub fn summary_labels(&self) -> Vec<String> {
        self.s1.iter().chain(&self.s2).cloned().collect()
    }
}

/// A model that can draw parameters from its prior and simulate summaries.
pub trait Simulator: Sync {
    fn blocks(&self) -> Blocks;

    /// Exact prior CDFs for parameters that have one.
    fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf>;

    fn prior_draw(&self, seed: u64) -> Result<Vec<f64>>;

    /// Summaries `(S₁, S₂)` at `params` (ordered `φ, η`).
    fn simulate_summaries(&self, params: &[f64], seed: u64) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "ConjugateSpec", into = "ConjugateSpec")]
pub struct ConjugateModel {
    pub spec: ConjugateSpec,
}

impl From<ConjugateSpec> for ConjugateModel {
    fn from(spec: ConjugateSpec) -> Self {
        Self { spec }
    }
}

impl From<ConjugateModel> for ConjugateSpec {
    fn from(m: ConjugateModel) -> Self {
        m.spec
    }
}

impl Simulator for ConjugateModel {
    fn blocks(&self) -> Blocks {
        Blocks::from_strs(&["phi"], &["eta"], &["zbar"], &["wbar"])
    }

    fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf> {
        let s = &self.spec;
        BTreeMap::from([
            (
                "phi".to_string(),
                AnalyticCdf::Normal {
                    mean: s.phi_mean,
                    sd: s.phi_sd,
                },
            ),
            (
                "eta".to_string(),
                AnalyticCdf::Normal {
                    mean: s.eta_mean,
                    sd: s.eta_sd,
                },
            ),
        ])
    }

    fn prior_draw(&self, seed: u64) -> Result<Vec<f64>> {
        self.spec.validate()?;
        let mut r = rng::seeded(seed);
        let phi = self.spec.phi_mean + self.spec.phi_sd * r.sample::<f64, _>(StandardNormal);
        let eta = self.spec.eta_mean + self.spec.eta_sd * r.sample::<f64, _>(StandardNormal);
        Ok(vec![phi, eta])
    }

    fn simulate_summaries(&self, params: &[f64], seed: u64) -> Result<Vec<f64>> {
        check_len(params, 2)?;
        let (z, w) = conjugate_simulate(&self.spec, params[0], params[1], seed)?;
        Ok(vec![z, w])
    }
}

pub const CONT_S1: [&str; 5] = ["jv_signed", "jv_var", "jv_acov", "logbv_skew", "logbv_kurt"];
pub const RETURN_SUMMARIES: [&str; 5] = ["r_mean", "r_var", "r_skew", "r_kurt", "absr_acf1"];
pub const BV_SUMMARIES: [&str; 7] = [
    "lbv_mean",
    "lbv_var",
    "lbv_skew",
    "dlbv_mean",
    "dlbv_var",
    "dlbv_skew",
    "lbv_acf1",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuousModel {
    pub prior: ContinuousPrior,
    pub sizes: ContTimeSizes,
}

impl ContinuousModel {
    pub fn params_from(&self, p: &[f64]) -> Result<ContTimeParams> {
        check_len(p, 10)?;
        Ok(ContTimeParams {
            mu_z: p[0],
            sigma_z: p[1],
            d: p[2],
            beta: p[3],
            tau: p[4],
            mu_p: p[5],
            kappa: p[6],
            alpha: p[7],
            sigma_v: p[8],
            rho: p[9],
        })
    }
}

impl Simulator for ContinuousModel {
    fn blocks(&self) -> Blocks {
        Blocks::from_strs(
            &ContTimeParams::PHI_LABELS,
            &ContTimeParams::ETA_LABELS,
            &CONT_S1,
            &RETURN_SUMMARIES,
        )
    }

    /// β has no fixed-box marginal, so it gets the kernel CDF.
    fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf> {
        self.prior
            .boxes()
            .iter()
            .map(|(n, b)| (n.to_string(), b.cdf()))
            .collect()
    }

    fn prior_draw(&self, seed: u64) -> Result<Vec<f64>> {
        Ok(prior_sample_continuous(&self.prior, seed)?.to_vec())
    }

    fn simulate_summaries(&self, params: &[f64], seed: u64) -> Result<Vec<f64>> {
        let p = self.params_from(params)?;
        let panel = simulate_continuous(&p, &self.sizes, seed)?;
        let (s1, floored) = jump_summaries(&panel);
        if floored > 0 {
            log::debug!("{floored} days with zero bipower variation floored");
        }
        let s2 = return_summaries(&panel.daily_returns())?;
        let out: Vec<f64> = s1.into_iter().chain(s2).collect();
        finite_or_degenerate(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteModel {
    pub prior: DiscretePrior,
    pub days: usize,
}

impl Default for DiscreteModel {
    fn default() -> Self {
        Self {
            prior: DiscretePrior::default(),
            days: 1500,
        }
    }
}

impl DiscreteModel {
    pub fn params_from(&self, p: &[f64]) -> Result<DiscreteTimeParams> {
        check_len(p, 10)?;
        Ok(DiscreteTimeParams {
            mu_z: p[0],
            sigma_z: p[1],
            d: p[2],
            beta: p[3],
            tau: p[4],
            psi0: self.prior.psi0,
            psi1: p[5],
            sigma_bv: p[6],
            omega: p[7],
            rho: p[8],
            sigma_h: p[9],
            alpha_stable: self.prior.alpha_stable,
        })
    }

    pub fn params_to_vec(p: &DiscreteTimeParams) -> Vec<f64> {
        vec![
            p.mu_z, p.sigma_z, p.d, p.beta, p.tau, p.psi1, p.sigma_bv, p.omega, p.rho, p.sigma_h,
        ]
    }

    /// `(S₁, S₂)` of an observed or simulated path.
    pub fn summaries(r: &[f64], log_bv: &[f64]) -> Result<Vec<f64>> {
        let s1 = return_summaries(r)?;
        let s2 = bv_summaries(log_bv)?;
        finite_or_degenerate(s1.into_iter().chain(s2).collect())
    }
}

impl Simulator for DiscreteModel {
    fn blocks(&self) -> Blocks {
        Blocks::from_strs(
            &DiscreteTimeParams::PHI_LABELS,
            &DiscreteTimeParams::ETA_LABELS,
            &RETURN_SUMMARIES,
            &BV_SUMMARIES,
        )
    }

    fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf> {
        self.prior
            .boxes()
            .iter()
            .map(|(n, b)| (n.to_string(), b.cdf()))
            .collect()
    }

    fn prior_draw(&self, seed: u64) -> Result<Vec<f64>> {
        Ok(Self::params_to_vec(&prior_sample_discrete(&self.prior, seed)?))
    }

    fn simulate_summaries(&self, params: &[f64], seed: u64) -> Result<Vec<f64>> {
        let p = self.params_from(params)?;
        let path = simulate_discrete(&p, self.days, seed)?;
        if path.guard_hits > 0 {
            log::debug!("volatility guard hit {} times", path.guard_hits);
        }
        Self::summaries(&path.r, &path.log_bv)
    }
}

/// Selects one of the built-in models by name in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinModel {
    Conjugate(ConjugateModel),
    Continuous(ContinuousModel),
    Discrete(DiscreteModel),
}

impl BuiltinModel {
    fn inner(&self) -> &dyn Simulator {
        match self {
            Self::Conjugate(m) => m,
            Self::Continuous(m) => m,
            Self::Discrete(m) => m,
        }
    }
}

impl Simulator for BuiltinModel {
    fn blocks(&self) -> Blocks {
        self.inner().blocks()
    }

    fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf> {
        self.inner().analytic_cdfs()
    }

    fn prior_draw(&self, seed: u64) -> Result<Vec<f64>> {
        self.inner().prior_draw(seed)
    }

    fn simulate_summaries(&self, params: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.inner().simulate_summaries(params, seed)
    }
}

fn check_len(p: &[f64], n: usize) -> Result<()> {
    if p.len() == n {
        Ok(())
    } else {
        Err(Error::contract(format!("expected {n} parameters, got {}", p.len())))
    }
}

fn finite_or_degenerate(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Degenerate("non-finite summary statistic".into()))
    }
}

const MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: usize,
    /// Prior draws discarded because simulation failed numerically.
    pub rejected: usize,
}

/// One prior-predictive draw `(θ, S)`. Draws whose simulation fails
/// numerically are redrawn; the second value counts them.
pub fn prior_predictive_row<S: Simulator + ?Sized>(sim: &S, seed: u64) -> Result<(Vec<f64>, usize)> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let mut row = sim.prior_draw(derive_seed(s, 0x7a))?;
        match sim.simulate_summaries(&row, derive_seed(s, 0x5b)) {
            Ok(summ) => {
                row.extend(summ);
                return Ok((row, attempt as usize));
            }
            Err(Error::Numerical(_) | Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::numerical(format!(
        "{MAX_ATTEMPTS} consecutive prior draws failed to simulate"
    )))
}

/// `n` prior-predictive rows; row `i` uses a seed derived from `(seed, i)`,
/// so the table does not depend on the thread count.
pub fn simulate_table<S: Simulator + ?Sized>(sim: &S, n: usize, seed: u64) -> Result<(SimTable, TableReport)> {
    if n == 0 {
        return Err(Error::contract("table needs at least one row"));
    }
    let rows: Vec<(Vec<f64>, usize)> = (0..n as u64)
        .into_par_iter()
        .map(|i| prior_predictive_row(sim, derive_seed(seed, i)))
        .collect::<Result<_>>()?;
    let blocks = sim.blocks();
    let rejected = rows.iter().map(|r| r.1).sum();
    let values: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    let table = SimTable::from_rows(blocks.labels(), &values, blocks.param_count())?;
    Ok((table, TableReport { rows: n, rejected }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_table_shape_and_determinism() {
        let m = ConjugateModel::default();
        let (a, rep) = simulate_table(&m, 500, 1).unwrap();
        let (b, _) = simulate_table(&m, 500, 1).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.labels(), ["phi", "eta", "zbar", "wbar"]);
        assert_eq!(a.param_count(), 2);
        assert_eq!(rep.rejected, 0);
    }

    #[test]
    fn thread_count_does_not_change_table() {
        let m = DiscreteModel {
            days: 200,
            ..DiscreteModel::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| simulate_table(&m, 40, 2).unwrap().0);
        let b = three.install(|| simulate_table(&m, 40, 2).unwrap().0);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn continuous_rows_are_finite() {
        let m = ContinuousModel {
            sizes: ContTimeSizes {
                days: 50,
                intraday: 10,
                euler_steps: 20,
            },
            ..ContinuousModel::default()
        };
        let (t, _) = simulate_table(&m, 20, 3).unwrap();
        assert_eq!(t.labels().len(), 20);
        assert_eq!(t.param_count(), 10);
        assert!(!m.analytic_cdfs().contains_key("beta"));
    }

    #[test]
    fn builtin_round_trips_through_json() {
        let m = BuiltinModel::Discrete(DiscreteModel::default());
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<BuiltinModel>(&s).unwrap(), m);
    }
}
