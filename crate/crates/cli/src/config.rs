//! Declarative run configuration, read from TOML (or JSON, including a run
//! manifest, which embeds the resolved configuration).

use modcut::fit::{AnalyticCdf, TransformOptions};
use modcut::forecast::{FilterOptions, ScoreSet};
use modcut::models::{BuiltinModel, ConjugateModel, ContinuousModel, DiscreteModel, Simulator};
use modcut::modular::{default_grid, DEFAULT_ALPHA, DEFAULT_N_REF};
use modcut::{Blocks, Error, FitConfig, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory. Not part of the configuration hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    /// Worker cap. Results do not depend on it, so it is not hashed either.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default = "default_n_sims")]
    pub n_sims: usize,
    pub model: ModelSpec,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub transform: TransformOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemNames>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Observed>,
    #[serde(default)]
    pub posterior: PosteriorSettings,
    #[serde(default)]
    pub check: CheckSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastSettings>,
}

fn default_out() -> PathBuf {
    PathBuf::from("modcut-out")
}

fn default_n_sims() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Conjugate(ConjugateModel),
    Continuous(ContinuousModel),
    Discrete(DiscreteModel),
    /// A prior-predictive table produced elsewhere.
    Table(TableModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableModel {
    pub path: PathBuf,
    /// Leading parameter columns; the rest are summaries.
    pub param_count: usize,
    #[serde(default)]
    pub analytic: BTreeMap<String, AnalyticCdf>,
}

impl ModelSpec {
    pub fn builtin(&self) -> Option<BuiltinModel> {
        match self {
            Self::Conjugate(m) => Some(BuiltinModel::Conjugate(*m)),
            Self::Continuous(m) => Some(BuiltinModel::Continuous(*m)),
            Self::Discrete(m) => Some(BuiltinModel::Discrete(*m)),
            Self::Table(_) => None,
        }
    }

    pub fn analytic_cdfs(&self) -> BTreeMap<String, AnalyticCdf> {
        match self {
            Self::Table(t) => t.analytic.clone(),
            _ => self.builtin().map(|m| m.analytic_cdfs()).unwrap_or_default(),
        }
    }
}

/// Variable names of the four blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemNames {
    pub phi: Vec<String>,
    #[serde(default)]
    pub eta: Vec<String>,
    pub s1: Vec<String>,
    #[serde(default)]
    pub s2: Vec<String>,
}

impl From<Blocks> for ProblemNames {
    fn from(b: Blocks) -> Self {
        Self {
            phi: b.phi,
            eta: b.eta,
            s1: b.s1,
            s2: b.s2,
        }
    }
}

impl ProblemNames {
    /// `φ, η, S₁, S₂` in order.
    pub fn all(&self) -> Vec<String> {
        [&self.phi, &self.eta, &self.s1, &self.s2]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }

    pub fn params(&self) -> Vec<String> {
        self.phi.iter().chain(&self.eta).cloned().collect()
    }

    pub fn summaries(&self) -> Vec<String> {
        self.s1.iter().chain(&self.s2).cloned().collect()
    }
}

/// Observed summaries on the original scale, given directly or computed
/// from a `r,log_bv` series for the discrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observed {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<PathBuf>,
    /// Use only the first `train` observations of `series`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSettings {
    pub samples: usize,
    pub grid_points: usize,
    /// Influence parameter for `smi` when none is given on the command line.
    pub gamma: Option<f64>,
    /// φ draws averaged over for the η marginals of staged posteriors.
    pub eta_draws: usize,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        Self {
            samples: 10_000,
            grid_points: 512,
            gamma: None,
            eta_draws: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Mixture,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub n_ref: usize,
    pub reference: ReferenceKind,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            grid: default_grid(),
            n_ref: DEFAULT_N_REF,
            reference: ReferenceKind::Mixture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSettings {
    /// CSV with columns `r` and `log_bv`.
    pub data: PathBuf,
    pub holdout: usize,
    /// Posterior draws `S` carried through the filter.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub filter: FilterOptions,
    #[serde(default)]
    pub scores: ScoreSet,
    /// Score semi-modular posteriors at these γ instead of a samples file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
}

fn default_draws() -> usize {
    1000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            match value.get("config") {
                Some(inner) => serde_json::from_value(inner.clone())?,
                None => serde_json::from_value(value)?,
            }
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_sims", self.n_sims),
            ("posterior.samples", self.posterior.samples),
            ("posterior.grid_points", self.posterior.grid_points),
            ("posterior.eta_draws", self.posterior.eta_draws),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.posterior.grid_points < 2 {
            return Err(Error::Config("posterior.grid_points must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if let Some(f) = &self.forecast {
            if f.holdout == 0 || f.draws == 0 {
                return Err(Error::Config(
                    "forecast.holdout and forecast.draws must be positive".into(),
                ));
            }
        }
        self.fit.validate()
    }

    /// Block names, from `[problem]` or the built-in model's own blocks.
    pub fn problem_names(&self) -> Result<ProblemNames> {
        match (&self.problem, self.model.builtin()) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(m)) => Ok(m.blocks().into()),
            (None, None) => Err(Error::Config("a table model needs a [problem] section".into())),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::manifest::sha256_hex(&serde_json::to_vec(self)?))
    }
}
