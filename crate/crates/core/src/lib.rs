//! Likelihood-free modular Bayesian inference on top of a single Gaussian
//! mixture fit to prior-predictive draws of parameters and summaries.
//!
//! The pipeline is:
//!
//! 1. simulate `(θ, S)` pairs from a generative model ([`models`]),
//! 2. map every column to a standard-normal margin and fit a full-covariance
//!    Gaussian mixture by EM with BIC selection ([`fit`]),
//! 3. read full, cut and semi-modular posteriors off the mixture in closed
//!    form, and run the prior-data conflict check that picks the influence
//!    parameter ([`modular`]),
//! 4. for the discrete-time jump model, filter the latent states and score
//!    one-step-ahead forecast densities ([`forecast`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod forecast;
pub mod gmm;
pub mod models;
pub mod modular;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use fit::{FitConfig, MarginalTransform, SimTable};
pub use forecast::{FilterOptions, ForecastDensity, ParticleCloud, ScalarMixture, ScoreTable};
pub use gmm::{GaussianMixture, IndexPartition};
pub use models::{Blocks, BuiltinModel, DiscreteTimeParams, Simulator};
pub use modular::{ConflictResult, GammaChoice, ModularProblem, StagedPosterior};
