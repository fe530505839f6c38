//! Batch front end: each subcommand reads a run configuration, writes its
//! artifacts into the output directory, and records a manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod grid;
pub mod manifest;

use clap::{Args, Parser, Subcommand};
use commands::PosteriorKind;
use config::RunConfig;
use modcut::{Error, Result};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "modcut", version = manifest::VERSION, about = "Mixture-based cut and semi-modular posteriors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML, or JSON such as a previous manifest).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a prior-predictive table from a built-in model.
    Simulate(Common),
    /// Fit the marginal transform and the joint mixture.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Table to fit instead of `<out>/table.csv`.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Full posterior samples and density grids.
    Posterior(Common),
    /// Cut posterior samples and density grids.
    Cut(Common),
    /// Semi-modular posterior samples and density grids.
    Smi {
        #[command(flatten)]
        common: Common,
        /// A value in [0, 1], or `chosen` for the γ* of a previous check.
        #[arg(long)]
        gamma: Option<String>,
    },
    /// Conflict check with its tail-probability curve.
    Check(Common),
    /// Choose the influence parameter γ.
    ChooseGamma(Common),
    /// Rolling one-step-ahead forecast scores.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Posterior samples to use instead of `<out>/posterior_samples.csv`.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Simulate(c) | Self::Posterior(c) | Self::Cut(c) | Self::Check(c) | Self::ChooseGamma(c) => c,
            Self::Fit { common, .. } | Self::Smi { common, .. } | Self::Forecast { common, .. } => common,
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Simulate(_) => commands::simulate(cfg),
        Command::Fit { table, .. } => commands::fit(cfg, table.as_deref()),
        Command::Posterior(_) => commands::posterior(cfg, PosteriorKind::Full, &[]),
        Command::Cut(_) => commands::posterior(cfg, PosteriorKind::Cut, &[]),
        Command::Smi { gamma, .. } => {
            let (g, inputs) = match gamma.as_deref() {
                Some("chosen") => {
                    let (g, path) = commands::chosen_gamma(cfg)?;
                    (g, vec![path])
                }
                Some(v) => (
                    v.parse::<f64>()
                        .map_err(|_| Error::Config(format!("--gamma `{v}` is neither a number nor `chosen`")))?,
                    vec![],
                ),
                None => (
                    cfg.posterior
                        .gamma
                        .ok_or_else(|| Error::Config("smi needs --gamma or posterior.gamma".into()))?,
                    vec![],
                ),
            };
            commands::posterior(cfg, PosteriorKind::Smi(g), &inputs)
        }
        Command::Check(_) => commands::check(cfg, true),
        Command::ChooseGamma(_) => commands::check(cfg, false),
        Command::Forecast { samples, .. } => commands::forecast(cfg, samples.as_deref()),
    }
}
