//! Full, cut and semi-modular posteriors from one fitted joint mixture, the
//! conflict check, and the choice of the influence parameter γ.
//!
//! All values here live on the normal scale of the fitted joint. `s_obs`
//! lists the `S₁` values followed by the `S₂` values, each block in the
//! order declared by the [`ModularProblem`].

use crate::error::{Error, Result};
use crate::fit::MarginalTransform;
use crate::gmm::{kl_mixture, kl_pool_curve, Conditioner, GaussianMixture, IndexPartition};
use crate::models::Simulator;
use crate::rng::{self, derive_seed};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Indices of `φ`, `η`, `S₁`, `S₂` in the joint mixture's variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModularProblem {
    phi_idx: Vec<usize>,
    eta_idx: Vec<usize>,
    s1_idx: Vec<usize>,
    s2_idx: Vec<usize>,
}

impl ModularProblem {
    /// The four lists must partition `0..dim`; `φ` and `S₁` must be nonempty.
    pub fn new(
        phi_idx: Vec<usize>,
        eta_idx: Vec<usize>,
        s1_idx: Vec<usize>,
        s2_idx: Vec<usize>,
        dim: usize,
    ) -> Result<Self> {
        if phi_idx.is_empty() {
            return Err(Error::contract("modular problem: φ block is empty"));
        }
        if s1_idx.is_empty() {
            return Err(Error::contract("modular problem: S₁ block is empty"));
        }
        let mut seen = vec![false; dim];
        for &i in phi_idx.iter().chain(&eta_idx).chain(&s1_idx).chain(&s2_idx) {
            if i >= dim {
                return Err(Error::contract(format!("index {i} out of range for dimension {dim}")));
            }
            if seen[i] {
                return Err(Error::contract(format!("index {i} appears in more than one block")));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("variable {i} is not assigned to any block")));
        }
        Ok(Self {
            phi_idx,
            eta_idx,
            s1_idx,
            s2_idx,
        })
    }

    /// Builds the problem from variable names.
    pub fn from_labels<S: AsRef<str>>(labels: &[String], phi: &[S], eta: &[S], s1: &[S], s2: &[S]) -> Result<Self> {
        let find = |names: &[S]| {
            names
                .iter()
                .map(|n| {
                    labels
                        .iter()
                        .position(|l| l == n.as_ref())
                        .ok_or_else(|| Error::contract(format!("unknown variable `{}`", n.as_ref())))
                })
                .collect::<Result<Vec<_>>>()
        };
        Self::new(find(phi)?, find(eta)?, find(s1)?, find(s2)?, labels.len())
    }

    pub fn from_blocks(labels: &[String], blocks: &crate::models::Blocks) -> Result<Self> {
        Self::from_labels(labels, &blocks.phi, &blocks.eta, &blocks.s1, &blocks.s2)
    }

    pub fn phi_idx(&self) -> &[usize] {
        &self.phi_idx
    }

    pub fn eta_idx(&self) -> &[usize] {
        &self.eta_idx
    }

    pub fn s1_idx(&self) -> &[usize] {
        &self.s1_idx
    }

    pub fn s2_idx(&self) -> &[usize] {
        &self.s2_idx
    }

    pub fn dim(&self) -> usize {
        self.phi_idx.len() + self.eta_idx.len() + self.s1_idx.len() + self.s2_idx.len()
    }

    /// `φ` then `η`.
    pub fn param_idx(&self) -> Vec<usize> {
        self.phi_idx.iter().chain(&self.eta_idx).copied().collect()
    }

    /// `S₁` then `S₂`.
    pub fn summary_idx(&self) -> Vec<usize> {
        self.s1_idx.iter().chain(&self.s2_idx).copied().collect()
    }

    fn check(&self, joint: &GaussianMixture, s_obs: &[f64]) -> Result<()> {
        if joint.dim() != self.dim() {
            return Err(Error::contract(format!(
                "problem covers {} variables, joint has {}",
                self.dim(),
                joint.dim()
            )));
        }
        let n = self.s1_idx.len() + self.s2_idx.len();
        if s_obs.len() != n {
            return Err(Error::contract(format!(
                "observed summaries have length {}, expected {n}",
                s_obs.len()
            )));
        }
        if s_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("observed summaries must be finite"));
        }
        Ok(())
    }
}

/// `p̃(φ, η | S = s_obs)`.
pub fn full_posterior(joint: &GaussianMixture, prob: &ModularProblem, s_obs: &[f64]) -> Result<GaussianMixture> {
    prob.check(joint, s_obs)?;
    joint.condition(&IndexPartition::new(prob.param_idx(), prob.summary_idx()), s_obs)
}

/// A posterior of the form `p(φ) p̃(η | φ, S = s_obs)`: a φ-marginal mixture
/// followed by an η-stage conditioned on the drawn φ and all observed
/// summaries.
#[derive(Debug, Clone)]
pub struct StagedPosterior {
    labels: Vec<String>,
    phi: GaussianMixture,
    eta_stage: Option<EtaStage>,
}

#[derive(Debug, Clone)]
struct EtaStage {
    conditioner: Conditioner,
    s_obs: Vec<f64>,
}

pub type CutPosterior = StagedPosterior;
pub type SmiPosterior = StagedPosterior;

impl StagedPosterior {
    fn build(joint: &GaussianMixture, prob: &ModularProblem, s_obs: &[f64], phi: GaussianMixture) -> Result<Self> {
        let mut labels = phi.labels().to_vec();
        let eta_stage = if prob.eta_idx.is_empty() {
            None
        } else {
            let w: Vec<usize> = prob.phi_idx.iter().copied().chain(prob.summary_idx()).collect();
            let conditioner = joint.conditioner(&IndexPartition::new(prob.eta_idx.clone(), w))?;
            labels.extend(conditioner.x_labels().iter().cloned());
            Some(EtaStage {
                conditioner,
                s_obs: s_obs.to_vec(),
            })
        };
        Ok(Self { labels, phi, eta_stage })
    }

    /// `φ` labels then `η` labels.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn phi_marginal(&self) -> &GaussianMixture {
        &self.phi
    }

    pub fn phi_dim(&self) -> usize {
        self.phi.dim()
    }

    /// `p̃(η | φ, S = s_obs)`, or `None` when there is no η block.
    pub fn eta_conditional(&self, phi: &[f64]) -> Result<Option<GaussianMixture>> {
        if phi.len() != self.phi.dim() {
            return Err(Error::contract(format!(
                "φ has length {}, expected {}",
                phi.len(),
                self.phi.dim()
            )));
        }
        match &self.eta_stage {
            None => Ok(None),
            Some(st) => {
                let w: Vec<f64> = phi.iter().chain(&st.s_obs).copied().collect();
                st.conditioner.condition(&w).map(Some)
            }
        }
    }

    /// Two-stage draws; rows are `(φ, η)` in [`Self::labels`] order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::contract("sample size must be positive"));
        }
        let mut rng = rng::seeded(seed);
        let dim = self.labels.len();
        let dp = self.phi.dim();
        let mut out = DMatrix::zeros(n, dim);
        for i in 0..n {
            let phi = self.phi.sample_one(&mut rng);
            for (j, v) in phi.iter().enumerate() {
                out[(i, j)] = *v;
            }
            if let Some(eta_mix) = self.eta_conditional(phi.as_slice())? {
                let eta = eta_mix.sample_one(&mut rng);
                for (j, v) in eta.iter().enumerate() {
                    out[(i, dp + j)] = *v;
                }
            }
        }
        Ok(out)
    }

    /// `log p(φ) + log p̃(η | φ, s_obs)` at `theta = (φ, η)`.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.labels.len() {
            return Err(Error::contract(format!(
                "point has length {}, expected {}",
                theta.len(),
                self.labels.len()
            )));
        }
        let (phi, eta) = theta.split_at(self.phi.dim());
        let lp = self.phi.log_density(phi)?;
        Ok(match self.eta_conditional(phi)? {
            None => lp,
            Some(m) => lp + m.log_density(eta)?,
        })
    }
}

fn phi_given(joint: &GaussianMixture, prob: &ModularProblem, w_idx: Vec<usize>, w: &[f64]) -> Result<GaussianMixture> {
    joint.condition(&IndexPartition::new(prob.phi_idx.clone(), w_idx), w)
}

/// `p̃(φ | S₁ = s_obs,1) p̃(η | φ, S = s_obs)`.
pub fn cut_posterior(joint: &GaussianMixture, prob: &ModularProblem, s_obs: &[f64]) -> Result<CutPosterior> {
    prob.check(joint, s_obs)?;
    let cut_phi = phi_given(joint, prob, prob.s1_idx.clone(), &s_obs[..prob.s1_idx.len()])?;
    StagedPosterior::build(joint, prob, s_obs, cut_phi)
}

/// Semi-modular posterior with φ-marginal `γ p̃(φ|S) + (1-γ) p̃(φ|S₁)`.
pub fn smi_posterior(
    joint: &GaussianMixture,
    prob: &ModularProblem,
    s_obs: &[f64],
    gamma: f64,
) -> Result<SmiPosterior> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::contract(format!("influence parameter {gamma} outside [0, 1]")));
    }
    prob.check(joint, s_obs)?;
    let cut_phi = phi_given(joint, prob, prob.s1_idx.clone(), &s_obs[..prob.s1_idx.len()])?;
    let full_phi = phi_given(joint, prob, prob.summary_idx(), s_obs)?;
    let pooled = GaussianMixture::pool(&full_phi, &cut_phi, gamma)?;
    StagedPosterior::build(joint, prob, s_obs, pooled)
}

/// `G̃ = KL(p̃(φ | S₁, S₂) || p̃(φ | S₁))` by the variational mixture formula.
pub fn conflict_statistic(
    joint: &GaussianMixture,
    prob: &ModularProblem,
    s1_val: &[f64],
    s2_val: &[f64],
) -> Result<f64> {
    if s1_val.len() != prob.s1_idx.len() || s2_val.len() != prob.s2_idx.len() {
        return Err(Error::contract("summary blocks have the wrong length"));
    }
    let s: Vec<f64> = s1_val.iter().chain(s2_val).copied().collect();
    prob.check(joint, &s)?;
    let full = phi_given(joint, prob, prob.summary_idx(), &s)?;
    let cut = phi_given(joint, prob, prob.s1_idx.clone(), s1_val)?;
    kl_mixture(&full, &cut)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictResult {
    pub observed_stat: f64,
    pub reference_stats: Vec<f64>,
    pub tail_p: f64,
    pub n_ref: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaChoice {
    pub gamma_star: f64,
    pub alpha: f64,
    /// `(γ, p(γ))` over the grid.
    pub curve: Vec<(f64, f64)>,
    /// `G̃_γ` at the observed summaries.
    pub observed_curve: Vec<f64>,
    pub conflict: ConflictResult,
}

pub const DEFAULT_N_REF: usize = 1000;
pub const MIN_N_REF: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// `{0, 0.01, ..., 1}`.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Where reference replicates of `S₂` come from.
#[derive(Clone, Copy)]
pub enum ReferenceDraws<'a> {
    /// `S₂' ~ p̃(S₂ | S₁ = s_obs,1)` from the joint mixture.
    Mixture,
    /// `θ' ~ p̃(θ | S₁ = s_obs,1)`, then `S₂'` simulated from the model at `θ'`
    /// and mapped to the normal scale.
    Model {
        simulator: &'a dyn Simulator,
        transform: &'a MarginalTransform,
    },
}

/// Smoothed tail probability `(#{r ≥ observed} + 1) / (n + 1)`.
pub fn tail_probability(observed: f64, reference: &[f64]) -> f64 {
    let above = reference.iter().filter(|&&r| r >= observed).count();
    (above + 1) as f64 / (reference.len() + 1) as f64
}

pub fn conflict_check(
    joint: &GaussianMixture,
    prob: &ModularProblem,
    s_obs: &[f64],
    n_ref: usize,
    seed: u64,
) -> Result<ConflictResult> {
    Ok(choose_gamma(joint, prob, s_obs, DEFAULT_ALPHA, &[0.0, 1.0], n_ref, seed)?.conflict)
}

pub fn choose_gamma(
    joint: &GaussianMixture,
    prob: &ModularProblem,
    s_obs: &[f64],
    alpha: f64,
    grid: &[f64],
    n_ref: usize,
    seed: u64,
) -> Result<GammaChoice> {
    choose_gamma_with(joint, prob, s_obs, alpha, grid, n_ref, seed, ReferenceDraws::Mixture)
}

/// Conflict check and γ selection from one shared set of reference draws.
/// The conflict statistic is the `γ = 1` column of the curve.
#[allow(clippy::too_many_arguments)]
pub fn choose_gamma_with(
    joint: &GaussianMixture,
    prob: &ModularProblem,
    s_obs: &[f64],
    alpha: f64,
    grid: &[f64],
    n_ref: usize,
    seed: u64,
    reference: ReferenceDraws<'_>,
) -> Result<GammaChoice> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!("alpha {alpha} outside (0, 1)")));
    }
    check_grid(grid)?;
    if n_ref < MIN_N_REF {
        return Err(Error::contract(format!("n_ref {n_ref} below {MIN_N_REF}")));
    }
    prob.check(joint, s_obs)?;
    let n1 = prob.s1_idx.len();
    let s1 = &s_obs[..n1];
    let cut_phi = phi_given(joint, prob, prob.s1_idx.clone(), s1)?;
    let full_cond = joint.conditioner(&IndexPartition::new(prob.phi_idx.clone(), prob.summary_idx()))?;
    let curve_at = |s2: &[f64]| -> Result<Vec<f64>> {
        let s: Vec<f64> = s1.iter().chain(s2).copied().collect();
        let full = full_cond.condition(&s)?;
        kl_pool_curve(&full, &cut_phi, grid)
    };
    let observed_curve = curve_at(&s_obs[n1..])?;
    let draw = ReferenceSampler::new(joint, prob, s1, reference)?;
    let reference_curves: Vec<Vec<f64>> = (0..n_ref as u64)
        .into_par_iter()
        .map(|i| curve_at(&draw.s2(derive_seed(seed, i))?))
        .collect::<Result<_>>()?;
    let last = grid.len() - 1;
    let curve: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let refs: Vec<f64> = reference_curves.iter().map(|c| c[k]).collect();
            (g, tail_probability(observed_curve[k], &refs))
        })
        .collect();
    let gamma_star = curve.iter().rev().find(|(_, p)| *p > alpha).map_or(0.0, |(g, _)| *g);
    let reference_stats: Vec<f64> = reference_curves.iter().map(|c| c[last]).collect();
    let conflict = ConflictResult {
        observed_stat: observed_curve[last],
        tail_p: curve[last].1,
        reference_stats,
        n_ref,
        seed,
    };
    Ok(GammaChoice {
        gamma_star,
        alpha,
        curve,
        observed_curve,
        conflict,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    let sorted = grid.windows(2).all(|w| w[0] < w[1]);
    if grid.len() < 2 || !sorted || grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
        return Err(Error::contract(
            "γ grid must be strictly increasing from 0 to 1 inclusive",
        ));
    }
    Ok(())
}

struct ReferenceSampler<'a> {
    s2_given_s1: Option<GaussianMixture>,
    model: Option<ModelReference<'a>>,
    n2: usize,
}

struct ModelReference<'a> {
    simulator: &'a dyn Simulator,
    transform: &'a MarginalTransform,
    params_given_s1: GaussianMixture,
    /// For each simulator parameter, its column in `params_given_s1`.
    param_cols: Vec<usize>,
    param_labels: Vec<String>,
    summary_labels: Vec<String>,
    /// For each `S₂` variable of the problem, its position in the simulator's
    /// summary vector.
    s2_cols: Vec<usize>,
}

const MODEL_REFERENCE_ATTEMPTS: u64 = 100;

impl<'a> ReferenceSampler<'a> {
    fn new(joint: &GaussianMixture, prob: &ModularProblem, s1: &[f64], reference: ReferenceDraws<'a>) -> Result<Self> {
        let n2 = prob.s2_idx.len();
        if n2 == 0 {
            return Ok(Self {
                s2_given_s1: None,
                model: None,
                n2,
            });
        }
        match reference {
            ReferenceDraws::Mixture => Ok(Self {
                s2_given_s1: Some(joint.condition(&IndexPartition::new(prob.s2_idx.clone(), prob.s1_idx.clone()), s1)?),
                model: None,
                n2,
            }),
            ReferenceDraws::Model { simulator, transform } => {
                let blocks = simulator.blocks();
                let params_given_s1 =
                    joint.condition(&IndexPartition::new(prob.param_idx(), prob.s1_idx.clone()), s1)?;
                let param_labels: Vec<String> = blocks.phi.iter().chain(&blocks.eta).cloned().collect();
                let param_cols = param_labels
                    .iter()
                    .map(|l| {
                        params_given_s1
                            .index_of(l)
                            .ok_or_else(|| Error::contract(format!("simulator parameter `{l}` not in the joint")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let summary_labels = blocks.summary_labels();
                let s2_cols = prob
                    .s2_idx
                    .iter()
                    .map(|&i| {
                        let l = &joint.labels()[i];
                        summary_labels
                            .iter()
                            .position(|s| s == l)
                            .ok_or_else(|| Error::contract(format!("simulator does not produce `{l}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self {
                    s2_given_s1: None,
                    model: Some(ModelReference {
                        simulator,
                        transform,
                        params_given_s1,
                        param_cols,
                        param_labels,
                        summary_labels,
                        s2_cols,
                    }),
                    n2,
                })
            }
        }
    }

    fn s2(&self, seed: u64) -> Result<Vec<f64>> {
        if let Some(m) = &self.s2_given_s1 {
            let mut rng = rng::seeded(seed);
            return Ok(m.sample_one(&mut rng).as_slice().to_vec());
        }
        let Some(m) = &self.model else {
            return Ok(Vec::new());
        };
        for attempt in 0..MODEL_REFERENCE_ATTEMPTS {
            let s = derive_seed(seed, attempt);
            let mut rng = rng::seeded(s);
            let z = m.params_given_s1.sample_one(&mut rng);
            let z_params = DVector::from_iterator(m.param_cols.len(), m.param_cols.iter().map(|&c| z[c]));
            let theta = m.transform.from_normal(
                &DMatrix::from_row_slice(1, z_params.len(), z_params.as_slice()),
                &m.param_labels,
            )?;
            match m.simulator.simulate_summaries(theta.as_slice(), derive_seed(s, 1)) {
                Ok(summ) => {
                    let (zs, _) = m.transform.forward_point(&m.summary_labels, &summ)?;
                    return Ok(m.s2_cols.iter().map(|&c| zs[c]).collect());
                }
                Err(Error::Numerical(_) | Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        debug_assert!(self.n2 > 0);
        Err(Error::numerical("model-based reference draws kept failing to simulate"))
    }
}
