use crate::config::{ModelSpec, ProblemNames, ReferenceKind, RunConfig};
use crate::grid::{density_grid, DensityGrid};
use crate::manifest::Manifest;
use modcut::fit::{build_transform, select_model};
use modcut::forecast::{rolling_evaluation, ScoreTable};
use modcut::models::{
    simulate_table, BuiltinModel, DiscreteModel, DiscreteTimeParams, Simulator, BV_SUMMARIES, RETURN_SUMMARIES,
};
use modcut::modular::{choose_gamma_with, cut_posterior, full_posterior, smi_posterior, GammaChoice, ReferenceDraws};
use modcut::rng::derive_seed;
use modcut::{Error, GaussianMixture, MarginalTransform, ModularProblem, Result, SimTable, StagedPosterior};
use nalgebra::DMatrix;
use serde_json::json;
use std::path::{Path, PathBuf};

const SIM_STREAM: u64 = 1;
const FIT_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;
const CHECK_STREAM: u64 = 4;
const FORECAST_STREAM: u64 = 5;
const ETA_STREAM: u64 = 6;
const DRAW_ATTEMPTS: u64 = 20;

pub const TABLE_FILE: &str = "table.csv";
pub const MIXTURE_FILE: &str = "mixture.json";
pub const TRANSFORM_FILE: &str = "transform.json";
pub const GAMMA_FILE: &str = "gamma_choice.json";

/// Which posterior the `posterior`, `cut` and `smi` commands report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorKind {
    Full,
    Cut,
    Smi(f64),
}

impl PosteriorKind {
    fn name(self) -> &'static str {
        match self {
            Self::Full => "posterior",
            Self::Cut => "cut",
            Self::Smi(_) => "smi",
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let model = builtin(cfg)?;
    let (table, report) = simulate_table(&model, cfg.n_sims, derive_seed(cfg.seed, SIM_STREAM))?;
    if report.rejected > 0 {
        log::warn!("{} prior draws rejected by the simulator", report.rejected);
    }
    let path = cfg.out.join(TABLE_FILE);
    table.write_csv(&path)?;
    let mut m = Manifest::new("simulate", cfg)?;
    m.output(&path)?;
    m.details.insert("rows".into(), json!(report.rows));
    m.details.insert("rejected".into(), json!(report.rejected));
    m.write(&cfg.out)
}

pub fn fit(cfg: &RunConfig, table: Option<&Path>) -> Result<()> {
    let (path, param_count) = match (&cfg.model, table) {
        (ModelSpec::Table(t), None) => (t.path.clone(), t.param_count),
        (ModelSpec::Table(t), Some(p)) => (p.to_path_buf(), t.param_count),
        (_, p) => (
            p.map_or_else(|| cfg.out.join(TABLE_FILE), Path::to_path_buf),
            builtin(cfg)?.blocks().param_count(),
        ),
    };
    let table = SimTable::read_csv(&path, param_count)?;
    let transform = build_transform(&table, &cfg.model.analytic_cdfs(), &cfg.transform)?;
    let (normal, clamped) = transform.to_normal(&table)?;
    if clamped > 0 {
        log::info!("{clamped} table entries clamped by the marginal transform");
    }
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.seed = derive_seed(derive_seed(cfg.seed, FIT_STREAM), cfg.fit.seed);
    let sel = select_model(&normal, &fit_cfg)?;

    let mixture_path = cfg.out.join(MIXTURE_FILE);
    let transform_path = cfg.out.join(TRANSFORM_FILE);
    let bic_path = cfg.out.join("bic.csv");
    sel.best.mixture.save(&mixture_path)?;
    transform.save(&transform_path)?;
    let mut w = csv::Writer::from_path(&bic_path)?;
    w.write_record(["components", "bic"])?;
    for (j, b) in &sel.bic_curve {
        w.write_record([j.to_string(), b.to_string()])?;
    }
    w.flush()?;

    let mut m = Manifest::new("fit", cfg)?;
    m.input(&path)?;
    for p in [&mixture_path, &transform_path, &bic_path] {
        m.output(p)?;
    }
    m.details
        .insert("components".into(), json!(sel.best.mixture.n_components()));
    m.details.insert("loglik".into(), json!(sel.best.loglik));
    m.details.insert("iterations".into(), json!(sel.best.iters));
    m.details.insert("clamped".into(), json!(clamped));
    m.details.insert("failures".into(), json!(sel.failures));
    m.write(&cfg.out)
}

/// The fitted joint restricted to the problem's variables, in block order,
/// with the observed summaries mapped to the normal scale.
struct Fitted {
    joint: GaussianMixture,
    transform: MarginalTransform,
    problem: ModularProblem,
    s_obs: Vec<f64>,
    inputs: Vec<PathBuf>,
}

fn load_fitted(cfg: &RunConfig) -> Result<Fitted> {
    let mixture_path = cfg.out.join(MIXTURE_FILE);
    let transform_path = cfg.out.join(TRANSFORM_FILE);
    let full = GaussianMixture::load(&mixture_path)?;
    let transform = MarginalTransform::load(&transform_path)?;
    let names = cfg.problem_names()?;
    let all = names.all();
    let keep: Vec<&str> = all.iter().map(String::as_str).collect();
    let joint = full.marginalize_labels(&keep)?;
    let problem = ModularProblem::from_labels(joint.labels(), &names.phi, &names.eta, &names.s1, &names.s2)?;
    let mut inputs = vec![mixture_path, transform_path];
    let raw = observed_summaries(cfg, &names, &mut inputs)?;
    let (s_obs, clamped) = transform.forward_point(&names.summaries(), &raw)?;
    if clamped > 0 {
        log::warn!("{clamped} observed summaries lie outside the simulated range and were clamped");
    }
    Ok(Fitted {
        joint,
        transform,
        problem,
        s_obs,
        inputs,
    })
}

/// Original-scale observed summaries in `S₁, S₂` order.
fn observed_summaries(cfg: &RunConfig, names: &ProblemNames, inputs: &mut Vec<PathBuf>) -> Result<Vec<f64>> {
    let obs = cfg
        .observed
        .as_ref()
        .ok_or_else(|| Error::Config("no [observed] section".into()))?;
    let mut values = obs.values.clone();
    if let Some(series) = &obs.series {
        if !matches!(cfg.model, ModelSpec::Discrete(_)) {
            return Err(Error::Config("observed.series needs the discrete model".into()));
        }
        let (mut r, mut lbv) = read_series(series)?;
        if let Some(n) = obs.train {
            if n > r.len() {
                return Err(Error::Config(format!(
                    "observed.train {n} exceeds the series length {}",
                    r.len()
                )));
            }
            r.truncate(n);
            lbv.truncate(n);
        }
        let s = DiscreteModel::summaries(&r, &lbv)?;
        for (label, v) in RETURN_SUMMARIES.iter().chain(&BV_SUMMARIES).zip(s) {
            values.entry(label.to_string()).or_insert(v);
        }
        inputs.push(series.clone());
    }
    names
        .summaries()
        .iter()
        .map(|l| {
            values
                .get(l)
                .copied()
                .ok_or_else(|| Error::Config(format!("no observed value for summary `{l}`")))
        })
        .collect()
}

pub fn posterior(cfg: &RunConfig, kind: PosteriorKind, extra_inputs: &[PathBuf]) -> Result<()> {
    let f = load_fitted(cfg)?;
    let seed = derive_seed(cfg.seed, SAMPLE_STREAM);
    let n = cfg.posterior.samples;
    let (labels, samples, marginals) = match kind {
        PosteriorKind::Full => {
            let post = full_posterior(&f.joint, &f.problem, &f.s_obs)?;
            let marginals = (0..post.dim())
                .map(|k| post.marginalize(&[k]))
                .collect::<Result<Vec<_>>>()?;
            (post.labels().to_vec(), post.sample(n, seed)?, marginals)
        }
        PosteriorKind::Cut | PosteriorKind::Smi(_) => {
            let post = match kind {
                PosteriorKind::Smi(g) => smi_posterior(&f.joint, &f.problem, &f.s_obs, g)?,
                _ => cut_posterior(&f.joint, &f.problem, &f.s_obs)?,
            };
            let marginals = staged_marginals(&post, cfg.posterior.eta_draws, derive_seed(cfg.seed, ETA_STREAM))?;
            (post.labels().to_vec(), post.sample(n, seed)?, marginals)
        }
    };
    let original = f.transform.from_normal(&samples, &labels)?;
    let grids = marginals
        .iter()
        .map(|m| density_grid(m, f.transform.variable(&m.labels()[0])?, cfg.posterior.grid_points))
        .collect::<Result<Vec<_>>>()?;

    let name = kind.name();
    let samples_path = cfg.out.join(format!("{name}_samples.csv"));
    let density_path = cfg.out.join(format!("{name}_density.csv"));
    write_matrix(&samples_path, &labels, &original)?;
    write_grids(&density_path, &grids)?;

    let mut m = Manifest::new(name, cfg)?;
    for p in f.inputs.iter().chain(extra_inputs) {
        m.input(p)?;
    }
    m.output(&samples_path)?;
    m.output(&density_path)?;
    if let PosteriorKind::Smi(g) = kind {
        m.details.insert("gamma".into(), json!(g));
    }
    let integrals: serde_json::Map<String, serde_json::Value> =
        grids.iter().map(|g| (g.label.clone(), json!(g.integral()))).collect();
    m.details.insert("grid_integrals".into(), integrals.into());
    m.write(&cfg.out)
}

/// Scalar normal-scale marginals of a staged posterior: exact for φ, and for
/// η the average of `p̃(η_k | φ_m, S)` over `draws` φ draws.
fn staged_marginals(post: &StagedPosterior, draws: usize, seed: u64) -> Result<Vec<GaussianMixture>> {
    let phi = post.phi_marginal();
    let mut out = (0..phi.dim())
        .map(|k| phi.marginalize(&[k]))
        .collect::<Result<Vec<_>>>()?;
    let eta_labels = &post.labels()[phi.dim()..];
    if eta_labels.is_empty() {
        return Ok(out);
    }
    let phis = phi.sample(draws, seed)?;
    let mut parts = vec![Vec::new(); eta_labels.len()];
    for i in 0..draws {
        let row: Vec<f64> = phis.row(i).iter().copied().collect();
        let cond = post
            .eta_conditional(&row)?
            .ok_or_else(|| Error::contract("η block vanished"))?;
        for (k, acc) in parts.iter_mut().enumerate() {
            for c in cond.marginalize(&[k])?.components() {
                acc.push((c.weight() / draws as f64, c.mean().clone(), c.cov().clone()));
            }
        }
    }
    for (label, p) in eta_labels.iter().zip(parts) {
        out.push(GaussianMixture::new(vec![label.clone()], p)?);
    }
    Ok(out)
}

/// `check` writes the conflict result as well as the γ choice; `choose-gamma`
/// writes only the choice.
pub fn check(cfg: &RunConfig, conflict_outputs: bool) -> Result<()> {
    let f = load_fitted(cfg)?;
    let model = cfg.model.builtin();
    let reference = match (cfg.check.reference, &model) {
        (ReferenceKind::Mixture, _) => ReferenceDraws::Mixture,
        (ReferenceKind::Model, Some(sim)) => ReferenceDraws::Model {
            simulator: sim,
            transform: &f.transform,
        },
        (ReferenceKind::Model, None) => {
            return Err(Error::Config(
                "model-based reference draws need a built-in model".into(),
            ))
        }
    };
    let choice = choose_gamma_with(
        &f.joint,
        &f.problem,
        &f.s_obs,
        cfg.check.alpha,
        &cfg.check.grid,
        cfg.check.n_ref,
        derive_seed(cfg.seed, CHECK_STREAM),
        reference,
    )?;
    let command = if conflict_outputs { "check" } else { "choose-gamma" };
    let mut m = Manifest::new(command, cfg)?;
    for p in &f.inputs {
        m.input(p)?;
    }
    let curve_path = cfg.out.join("gamma_curve.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["gamma", "tail_p", "observed_kl"])?;
    for ((g, p), kl) in choice.curve.iter().zip(&choice.observed_curve) {
        w.write_record([g.to_string(), p.to_string(), kl.to_string()])?;
    }
    w.flush()?;
    m.output(&curve_path)?;
    let choice_path = cfg.out.join(GAMMA_FILE);
    std::fs::write(&choice_path, serde_json::to_string_pretty(&choice)? + "\n")?;
    m.output(&choice_path)?;
    if conflict_outputs {
        let conflict_path = cfg.out.join("conflict.json");
        std::fs::write(&conflict_path, serde_json::to_string_pretty(&choice.conflict)? + "\n")?;
        m.output(&conflict_path)?;
    }
    m.details.insert("gamma_star".into(), json!(choice.gamma_star));
    m.details.insert("tail_p".into(), json!(choice.conflict.tail_p));
    log::info!(
        "conflict tail probability {:.4}, gamma* = {}",
        choice.conflict.tail_p,
        choice.gamma_star
    );
    m.write(&cfg.out)
}

/// `γ*` from a previous `check` or `choose-gamma` run.
pub fn chosen_gamma(cfg: &RunConfig) -> Result<(f64, PathBuf)> {
    let path = cfg.out.join(GAMMA_FILE);
    let choice: GammaChoice = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    Ok((choice.gamma_star, path))
}

pub fn forecast(cfg: &RunConfig, samples: Option<&Path>) -> Result<()> {
    let model = match cfg.model {
        ModelSpec::Discrete(m) => m,
        _ => return Err(Error::Config("forecasting needs the discrete model".into())),
    };
    let fs = cfg
        .forecast
        .as_ref()
        .ok_or_else(|| Error::Config("no [forecast] section".into()))?;
    let (r, lbv) = read_series(&fs.data)?;
    let mut m = Manifest::new("forecast", cfg)?;
    m.input(&fs.data)?;
    let mut columns: Vec<(String, Vec<DiscreteTimeParams>)> = Vec::new();
    match &fs.gammas {
        Some(gammas) => {
            let f = load_fitted(cfg)?;
            for p in &f.inputs {
                m.input(p)?;
            }
            for (i, &g) in gammas.iter().enumerate() {
                let post = smi_posterior(&f.joint, &f.problem, &f.s_obs, g)?;
                let seed = derive_seed(derive_seed(cfg.seed, SAMPLE_STREAM), i as u64);
                let draws = posterior_draws(&model, &post, &f, fs.draws, seed)?;
                columns.push((format!("gamma={g}"), draws));
            }
        }
        None => {
            let path = samples.map_or_else(|| cfg.out.join("posterior_samples.csv"), Path::to_path_buf);
            let (labels, rows) = read_matrix(&path)?;
            let draws = valid_draws(&model, &labels, rows.iter().map(Vec::as_slice), fs.draws)?;
            if draws.len() < fs.draws {
                return Err(Error::Config(format!(
                    "{} holds {} usable draws, {} requested",
                    path.display(),
                    draws.len(),
                    fs.draws
                )));
            }
            m.input(&path)?;
            let name = path
                .file_stem()
                .map_or("samples".into(), |s| s.to_string_lossy().into_owned());
            columns.push((name, draws));
        }
    }
    let seed = derive_seed(cfg.seed, FORECAST_STREAM);
    let tables = columns
        .iter()
        .map(|(_, draws)| rolling_evaluation(draws, &r, &lbv, fs.holdout, &fs.filter, fs.scores, seed))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
    let scores_path = cfg.out.join("scores.csv");
    let steps_path = cfg.out.join("forecast_steps.csv");
    write_scores(&scores_path, &names, &tables)?;
    write_steps(&steps_path, &names, &tables)?;
    m.output(&scores_path)?;
    m.output(&steps_path)?;
    m.write(&cfg.out)
}

/// Draws from `post` mapped to the original scale, keeping only those that
/// satisfy the model's parameter constraints.
fn posterior_draws(
    model: &DiscreteModel,
    post: &StagedPosterior,
    f: &Fitted,
    n: usize,
    seed: u64,
) -> Result<Vec<DiscreteTimeParams>> {
    let labels = post.labels().to_vec();
    let mut out = Vec::with_capacity(n);
    for attempt in 0..DRAW_ATTEMPTS {
        let z = post.sample(n, derive_seed(seed, attempt))?;
        let x = f.transform.from_normal(&z, &labels)?;
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
        out.extend(valid_draws(
            model,
            &labels,
            rows.iter().map(Vec::as_slice),
            n - out.len(),
        )?);
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(Error::numerical(format!(
        "only {} of {n} posterior draws satisfy the parameter constraints",
        out.len()
    )))
}

fn valid_draws<'a>(
    model: &DiscreteModel,
    labels: &[String],
    rows: impl Iterator<Item = &'a [f64]>,
    limit: usize,
) -> Result<Vec<DiscreteTimeParams>> {
    let cols = DiscreteTimeParams::PHI_LABELS
        .iter()
        .chain(&DiscreteTimeParams::ETA_LABELS)
        .map(|name| {
            labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Config(format!("posterior samples lack parameter `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut rejected = 0;
    for row in rows {
        if out.len() == limit {
            break;
        }
        let v: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        let p = model.params_from(&v)?;
        if p.validate().is_ok() {
            out.push(p);
        } else {
            rejected += 1;
        }
    }
    if rejected > 0 {
        log::info!("{rejected} posterior draws violate the parameter constraints and were skipped");
    }
    Ok(out)
}

fn builtin(cfg: &RunConfig) -> Result<BuiltinModel> {
    cfg.model
        .builtin()
        .ok_or_else(|| Error::Config("an external table model cannot be simulated".into()))
}

#[derive(serde::Deserialize)]
struct SeriesRow {
    r: f64,
    log_bv: f64,
}

pub fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut r = Vec::new();
    let mut lbv = Vec::new();
    for row in rdr.deserialize::<SeriesRow>() {
        let row = row?;
        r.push(row.r);
        lbv.push(row.log_bv);
    }
    Ok((r, lbv))
}

pub fn write_series(path: &Path, r: &[f64], log_bv: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r", "log_bv"])?;
    for (a, b) in r.iter().zip(log_bv) {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, labels: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(labels)?;
    for i in 0..x.nrows() {
        w.write_record(x.row(i).iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: `{s}`: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((labels, rows))
}

fn write_grids(path: &Path, grids: &[DensityGrid]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "x", "density"])?;
    for g in grids {
        for (x, d) in g.x.iter().zip(&g.density) {
            w.write_record([g.label.clone(), x.to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows are score and outcome, columns the scored posteriors.
fn write_scores(path: &Path, names: &[&str], tables: &[ScoreTable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["score", "outcome"].into_iter().chain(names.iter().copied()))?;
    for outcome in ["r", "log_bv"] {
        for score in ["LS", "QS", "CRPS"] {
            let vals: Option<Vec<f64>> = tables
                .iter()
                .map(|t| {
                    let s = if outcome == "r" { &t.mean_r } else { &t.mean_log_bv };
                    match score {
                        "LS" => s.ls,
                        "QS" => s.qs,
                        _ => s.crps,
                    }
                })
                .collect();
            if let Some(vals) = vals {
                let mut rec = vec![score.to_string(), outcome.to_string()];
                rec.extend(vals.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_steps(path: &Path, names: &[&str], tables: &[ScoreTable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["posterior", "t", "outcome", "ls", "qs", "crps"])?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (name, t) in names.iter().zip(tables) {
        for s in &t.steps {
            for (outcome, sc) in [("r", s.r), ("log_bv", s.log_bv)] {
                w.write_record([
                    name.to_string(),
                    s.t.to_string(),
                    outcome.to_string(),
                    cell(sc.ls),
                    cell(sc.qs),
                    cell(sc.crps),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
