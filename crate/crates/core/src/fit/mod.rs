//! From prior-predictive draws to a fitted mixture on the normal scale.

mod em;
mod table;
mod transform;

pub use em::{em_fit, em_fit_calls, select_model, EmDiagnostics, EmFit, ModelSelection};
pub use table::SimTable;
pub use transform::{
    build_transform, AnalyticCdf, CdfKind, MarginalTransform, TransformOptions, VariableTransform,
    TRANSFORM_SCHEMA_VERSION,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub j_max: usize,
    pub n_restarts: usize,
    /// Relative change in log-likelihood that stops EM.
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Added to every covariance diagonal in each M-step.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            j_max: 10,
            n_restarts: 5,
            em_tol: 1e-6,
            em_max_iter: 500,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_max == 0 || self.n_restarts == 0 || self.em_max_iter == 0 {
            return Err(Error::Config(
                "j_max, n_restarts and em_max_iter must be positive".into(),
            ));
        }
        if !(self.em_tol > 0.0) || !(self.ridge > 0.0) {
            return Err(Error::Config("em_tol and ridge must be positive".into()));
        }
        Ok(())
    }
}

/// BIC of a full-covariance mixture: `-2 loglik + k ln n` with
/// `k = (J-1) + J d + J d (d+1)/2`.
pub fn bic(loglik: f64, j: usize, d: usize, n: usize) -> f64 {
    let k = (j - 1) + j * d + j * d * (d + 1) / 2;
    -2.0 * loglik + k as f64 * (n as f64).ln()
}
