//! Exact algebra on Gaussian mixtures.
//!
//! A [`GaussianMixture`] is immutable once built. Each component caches the
//! lower Cholesky factor of its covariance, so density evaluation,
//! conditioning and KL computations never form an explicit inverse.

mod condition;
pub(crate) mod io;
mod kl;

pub use condition::{Conditioner, IndexPartition};
pub use io::{MixtureDoc, MIXTURE_SCHEMA_VERSION};
pub use kl::{kl_gaussian, kl_mixture, kl_pool_curve};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{log_sum_exp, norm_cdf, LN_2PI};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;

/// Components whose weight falls below this are dropped after pooling and
/// conditioning.
pub const PRUNE_WEIGHT: f64 = 1e-14;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_BASE: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;

/// One weighted multivariate normal with its cached factorisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Component {
    /// Builds a component, factorising `cov` under the jitter policy.
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::contract(format!(
                "covariance is {}x{}, mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::contract(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let (cov, chol) = factorize(sym)?;
        Ok(Self::from_factor(weight, mean, cov, chol))
    }

    pub(crate) fn from_factor(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>, chol: DMatrix<f64>) -> Self {
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Self {
            weight,
            mean,
            cov,
            chol,
            log_det,
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
    /// Lower-triangular Cholesky factor of [`Self::cov`].
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub(crate) fn with_weight(&self, weight: f64) -> Self {
        Self { weight, ..self.clone() }
    }

    /// Log of the normal density (without the mixture weight).
    pub fn log_pdf(&self, u: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff = DVector::from_iterator(d, u.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cached Cholesky factor has a positive diagonal");
        -0.5 * (d as f64 * LN_2PI + self.log_det + z.norm_squared())
    }
}

/// Cholesky with escalating diagonal jitter: `1e-8 * mean(diag)`, then ten and
/// a hundred times that. Returns the (possibly jittered) covariance and its
/// lower factor.
pub(crate) fn factorize(cov: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("covariance has non-finite entries"));
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok((cov, ch.l()));
    }
    let d = cov.nrows();
    let mean_diag = (cov.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = JITTER_BASE * mean_diag;
    for _ in 0..JITTER_RETRIES {
        let mut jittered = cov.clone();
        for i in 0..d {
            jittered[(i, i)] += eps;
        }
        if let Some(ch) = jittered.clone().cholesky() {
            return Ok((jittered, ch.l()));
        }
        eps *= 10.0;
    }
    Err(Error::numerical(
        "covariance is not positive definite within the jitter budget",
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    labels: Vec<String>,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Validating constructor from `(weight, mean, cov)` triples.
    pub fn new(labels: Vec<String>, parts: Vec<(f64, DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        let mut components = Vec::with_capacity(parts.len());
        for (j, (w, m, c)) in parts.into_iter().enumerate() {
            let comp = Component::new(w, m, c).map_err(|e| match e {
                Error::Numerical(msg) => Error::numerical(format!("component {j}: {msg}")),
                Error::Contract(msg) => Error::contract(format!("component {j}: {msg}")),
                other => other,
            })?;
            components.push(comp);
        }
        Self::from_components(labels, components)
    }

    pub fn from_components(labels: Vec<String>, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::contract("mixture needs at least one component"));
        }
        let dim = labels.len();
        if dim == 0 {
            return Err(Error::contract("mixture dimension must be positive"));
        }
        let unique: HashSet<&String> = labels.iter().collect();
        if unique.len() != dim {
            return Err(Error::contract("mixture labels must be unique"));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::contract(format!(
                    "component {j} has dimension {}, labels give {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::contract(format!("component {j} has invalid weight")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::contract(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { labels, components })
    }

    /// Builds from components whose log-weights are unnormalised; normalises,
    /// prunes negligible components and renormalises if anything was dropped.
    pub(crate) fn from_log_weights(
        labels: Vec<String>,
        log_weights: &[f64],
        components: Vec<Component>,
    ) -> Result<Self> {
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(Error::numerical("all conditional component weights underflowed"));
        }
        let weighted: Vec<Component> = components
            .into_iter()
            .zip(log_weights)
            .map(|(c, lw)| c.with_weight((lw - lse).exp()))
            .collect();
        Ok(Self {
            labels,
            components: prune(weighted),
        })
    }

    /// Single-component convenience constructor.
    pub fn gaussian(labels: Vec<String>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(labels, vec![(1.0, mean, cov)])
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn components(&self) -> &[Component] {
        &self.components
    }
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Same mixture under new variable names.
    pub fn relabel(&self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::contract("relabel: wrong number of labels"));
        }
        Self::from_components(labels, self.components.clone())
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::contract(format!(
                "point has length {}, mixture dimension is {}",
                u.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        Ok(self.log_density_unchecked(u))
    }

    pub(crate) fn log_density_unchecked(&self, u: &[f64]) -> f64 {
        let terms: Vec<f64> = self.components.iter().map(|c| c.weight.ln() + c.log_pdf(u)).collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, u: &[f64]) -> Result<f64> {
        self.log_density(u).map(f64::exp)
    }

    /// `n` i.i.d. draws as the rows of an `n x dim` matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::contract("sample size must be at least 1"));
        }
        let mut rng = rng::seeded(seed);
        let mut out = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            let x = self.sample_one(&mut rng);
            out.row_mut(i).copy_from(&x.transpose());
        }
        Ok(out)
    }

    /// One draw: categorical component index, then `mean + L z`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let c = &self.components[self.pick_component(rng)];
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &c.mean + &c.chol * z
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0)
    }

    /// Marginal over the variables in `keep`, in that order.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::contract("marginalize: empty index list"));
        }
        check_indices(keep, self.dim())?;
        let labels = keep.iter().map(|&i| self.labels[i].clone()).collect();
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = select_vec(&c.mean, keep);
                let cov = select_block(&c.cov, keep, keep);
                // sub-blocks of a PD matrix are PD; refactor without jitter
                let (cov, chol) = factorize(cov)?;
                Ok(Component::from_factor(c.weight, mean, cov, chol))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { labels, components })
    }

    /// Marginal over variables named in `keep`.
    pub fn marginalize_labels(&self, keep: &[&str]) -> Result<Self> {
        let idx = keep
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::contract(format!("unknown label `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.marginalize(&idx)
    }

    /// Conditional mixture of `X | W = w`.
    pub fn condition(&self, part: &IndexPartition, w: &[f64]) -> Result<Self> {
        self.conditioner(part)?.condition(w)
    }

    /// Precomputes the per-component regression for repeated conditioning on
    /// the same partition.
    pub fn conditioner(&self, part: &IndexPartition) -> Result<Conditioner> {
        Conditioner::new(self, part)
    }

    /// Linear opinion pool `gamma * a + (1 - gamma) * b` as a single mixture.
    pub fn pool(a: &Self, b: &Self, gamma: f64) -> Result<Self> {
        Ok(Self::pool_with_origin(a, b, gamma)?.0)
    }

    /// The pool plus, for each kept component, its index in `a`'s components
    /// followed by `b`'s.
    pub(crate) fn pool_with_origin(a: &Self, b: &Self, gamma: f64) -> Result<(Self, Vec<usize>)> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::contract(format!("pooling weight {gamma} outside [0, 1]")));
        }
        if a.labels != b.labels {
            return Err(Error::contract("pool: mixtures have different labels"));
        }
        let comps: Vec<Component> = a
            .components
            .iter()
            .map(|c| c.with_weight(gamma * c.weight))
            .chain(b.components.iter().map(|c| c.with_weight((1.0 - gamma) * c.weight)))
            .collect();
        let origin = comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.weight >= PRUNE_WEIGHT)
            .map(|(i, _)| i)
            .collect();
        Ok((
            Self {
                labels: a.labels.clone(),
                components: prune(comps),
            },
            origin,
        ))
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let second = self
            .components
            .iter()
            .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, c| {
                acc + (&c.cov + &c.mean * c.mean.transpose()) * c.weight
            });
        second - &m * m.transpose()
    }

    /// CDF of a one-dimensional mixture.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        self.require_scalar()?;
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * norm_cdf((x - c.mean[0]) / c.cov[(0, 0)].sqrt()))
            .sum())
    }

    /// Quantile of a one-dimensional mixture by bracketed bisection.
    pub fn quantile_1d(&self, p: f64) -> Result<f64> {
        self.require_scalar()?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::contract(format!("quantile level {p} outside (0, 1)")));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &self.components {
            let s = c.cov[(0, 0)].sqrt();
            lo = lo.min(c.mean[0] - 40.0 * s);
            hi = hi.max(c.mean[0] + 40.0 * s);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_1d(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn require_scalar(&self) -> Result<()> {
        if self.dim() != 1 {
            return Err(Error::contract("operation needs a one-dimensional mixture"));
        }
        Ok(())
    }
}

fn prune(components: Vec<Component>) -> Vec<Component> {
    let dropped: f64 = components
        .iter()
        .filter(|c| c.weight < PRUNE_WEIGHT)
        .map(|c| c.weight)
        .sum();
    let kept: Vec<Component> = components.into_iter().filter(|c| c.weight >= PRUNE_WEIGHT).collect();
    if dropped > 0.0 {
        let total: f64 = kept.iter().map(|c| c.weight).sum();
        kept.into_iter()
            .map(|c| {
                let w = c.weight / total;
                c.with_weight(w)
            })
            .collect()
    } else {
        kept
    }
}

pub(crate) fn check_indices(idx: &[usize], dim: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for &i in idx {
        if i >= dim {
            return Err(Error::contract(format!("index {i} out of range for dimension {dim}")));
        }
        if !seen.insert(i) {
            return Err(Error::contract(format!("duplicate index {i}")));
        }
    }
    Ok(())
}

pub(crate) fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub(crate) fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

#[cfg(test)]
pub(crate) mod tests;
