use super::{check_indices, factorize, select_block, select_vec, Component, GaussianMixture};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;
use nalgebra::{DMatrix, DVector};

/// Split of a mixture's variables into a target block `X` and a conditioning
/// block `W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    pub x_idx: Vec<usize>,
    pub w_idx: Vec<usize>,
}

impl IndexPartition {
    pub fn new(x_idx: Vec<usize>, w_idx: Vec<usize>) -> Self {
        Self { x_idx, w_idx }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.x_idx.is_empty() {
            return Err(Error::contract("partition has an empty target block"));
        }
        let all: Vec<usize> = self.x_idx.iter().chain(&self.w_idx).copied().collect();
        check_indices(&all, dim)
    }
}

/// Per-component pieces of `X | W` that do not depend on the value of `W`.
#[derive(Debug, Clone)]
struct Regression {
    log_weight: f64,
    mean_x: DVector<f64>,
    mean_w: DVector<f64>,
    chol_w: DMatrix<f64>,
    log_det_w: f64,
    /// `Σ_xw Σ_w⁻¹`
    gain: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    cond_chol: DMatrix<f64>,
}

/// Precomputed conditioning of one mixture on one partition. Conditioning on
/// many values of `W` (reference replicates, two-stage sampling) reuses the
/// factorisations.
#[derive(Debug, Clone)]
pub struct Conditioner {
    x_labels: Vec<String>,
    w_len: usize,
    parts: Vec<Regression>,
}

impl Conditioner {
    pub(super) fn new(gmm: &GaussianMixture, part: &IndexPartition) -> Result<Self> {
        part.validate(gmm.dim())?;
        let x = &part.x_idx;
        let w = &part.w_idx;
        let mut parts = Vec::with_capacity(gmm.n_components());
        for (j, c) in gmm.components().iter().enumerate() {
            let mean_x = select_vec(c.mean(), x);
            let mean_w = select_vec(c.mean(), w);
            let cov_x = select_block(c.cov(), x, x);
            let reg = if w.is_empty() {
                let (cond_cov, cond_chol) =
                    factorize(cov_x).map_err(|e| Error::numerical(format!("component {j}: {e}")))?;
                Regression {
                    log_weight: c.weight().ln(),
                    mean_x,
                    mean_w,
                    chol_w: DMatrix::zeros(0, 0),
                    log_det_w: 0.0,
                    gain: DMatrix::zeros(x.len(), 0),
                    cond_cov,
                    cond_chol,
                }
            } else {
                let cov_w = select_block(c.cov(), w, w);
                let cov_wx = select_block(c.cov(), w, x);
                let (_, chol_w) = factorize(cov_w)
                    .map_err(|e| Error::numerical(format!("component {j}: conditioning block: {e}")))?;
                let log_det_w = 2.0 * chol_w.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                // Σ_w⁻¹ Σ_wx via two triangular solves
                let tmp = chol_w
                    .solve_lower_triangular(&cov_wx)
                    .ok_or_else(|| Error::numerical("singular conditioning block"))?;
                let sol = chol_w
                    .transpose()
                    .solve_upper_triangular(&tmp)
                    .ok_or_else(|| Error::numerical("singular conditioning block"))?;
                let gain = sol.transpose();
                // Σ_x − Σ_xw Σ_w⁻¹ Σ_wx = Σ_x − tmpᵀ tmp
                let schur = &cov_x - tmp.transpose() * &tmp;
                let schur = (&schur + schur.transpose()) * 0.5;
                let (cond_cov, cond_chol) = factorize(schur)
                    .map_err(|e| Error::numerical(format!("component {j}: conditional covariance: {e}")))?;
                Regression {
                    log_weight: c.weight().ln(),
                    mean_x,
                    mean_w,
                    chol_w,
                    log_det_w,
                    gain,
                    cond_cov,
                    cond_chol,
                }
            };
            parts.push(reg);
        }
        Ok(Self {
            x_labels: x.iter().map(|&i| gmm.labels()[i].clone()).collect(),
            w_len: w.len(),
            parts,
        })
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    /// Log marginal density of `W` under each component plus its log-weight.
    fn log_weights(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        let wv = DVector::from_column_slice(w);
        let mut lws = Vec::with_capacity(self.parts.len());
        let mut diffs = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            if self.w_len == 0 {
                lws.push(p.log_weight);
                diffs.push(DVector::zeros(0));
                continue;
            }
            let diff = &wv - &p.mean_w;
            let z = p
                .chol_w
                .solve_lower_triangular(&diff)
                .ok_or_else(|| Error::numerical("singular conditioning block"))?;
            let lpdf = -0.5 * (self.w_len as f64 * LN_2PI + p.log_det_w + z.norm_squared());
            lws.push(p.log_weight + lpdf);
            diffs.push(diff);
        }
        Ok((lws, diffs))
    }

    /// Conditional mixture at `W = w`.
    pub fn condition(&self, w: &[f64]) -> Result<GaussianMixture> {
        if w.len() != self.w_len {
            return Err(Error::contract(format!(
                "conditioning value has length {}, expected {}",
                w.len(),
                self.w_len
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("conditioning value is not finite"));
        }
        let (lws, diffs) = self.log_weights(w)?;
        let comps = self
            .parts
            .iter()
            .zip(&diffs)
            .map(|(p, d)| {
                let mean = if self.w_len == 0 {
                    p.mean_x.clone()
                } else {
                    &p.mean_x + &p.gain * d
                };
                Component::from_factor(0.0, mean, p.cond_cov.clone(), p.cond_chol.clone())
            })
            .collect();
        GaussianMixture::from_log_weights(self.x_labels.clone(), &lws, comps)
    }

    /// Log marginal density of the conditioning block at `w`.
    pub fn log_marginal_w(&self, w: &[f64]) -> Result<f64> {
        let (lws, _) = self.log_weights(w)?;
        Ok(crate::stats::log_sum_exp(&lws))
    }
}
