//! Full-covariance EM for Gaussian mixtures.
//!
//! The ridge added to each covariance in the M-step makes the update the
//! exact maximiser of the expected complete-data log-likelihood plus a
//! per-point penalty `-(ridge/2) tr(Σ_k⁻¹)`. The E-step uses the same
//! penalised component terms, so the penalised objective recorded in
//! [`EmDiagnostics::objective_trace`] never decreases between component
//! removals.

use super::table::SimTable;
use super::{bic, FitConfig};
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::rng;
use crate::stats::LN_2PI;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

static EM_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`em_fit`] invocations in this process.
pub fn em_fit_calls() -> usize {
    EM_CALLS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmDiagnostics {
    pub requested_components: usize,
    pub final_components: usize,
    /// Iterations after which a collapsed component was removed.
    pub removals: Vec<usize>,
    pub converged: bool,
    pub restart: usize,
    /// Penalised objective after each E-step.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub loglik: f64,
    pub iters: usize,
    pub diagnostics: EmDiagnostics,
}

#[derive(Debug, Clone)]
pub struct ModelSelection {
    pub best: EmFit,
    pub bic_curve: Vec<(usize, f64)>,
    /// `(J, error message)` for fits that failed.
    pub failures: Vec<(usize, String)>,
}

struct Data<'a> {
    x: &'a [f64],
    n: usize,
    d: usize,
}

impl Data<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
}

/// Evaluation cache for one component: inverse Cholesky factor (row-major,
/// lower triangle) and constant terms.
struct Eval {
    linv: Vec<f64>,
    log_const: f64,
}

fn prepare(params: &Params, d: usize, ridge: f64) -> Result<Vec<Eval>> {
    params
        .covs
        .iter()
        .zip(&params.weights)
        .enumerate()
        .map(|(k, (cov, &w))| {
            let (_, l) =
                crate::gmm::factorize(cov.clone()).map_err(|e| Error::numerical(format!("EM component {k}: {e}")))?;
            let linv_m = l
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .ok_or_else(|| Error::numerical(format!("EM component {k}: singular factor")))?;
            let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mut linv = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..=r {
                    linv[r * d + c] = linv_m[(r, c)];
                }
            }
            let tr_prec = linv_m.norm_squared();
            Ok(Eval {
                linv,
                log_const: w.ln() - 0.5 * (d as f64 * LN_2PI + log_det) - 0.5 * ridge * tr_prec,
            })
        })
        .collect()
}

/// Returns `(penalised objective, responsibilities n x J)`.
fn e_step(data: &Data, params: &Params, ridge: f64) -> Result<(f64, Vec<f64>)> {
    let (n, d) = (data.n, data.d);
    let j = params.weights.len();
    let evals = prepare(params, d, ridge)?;
    let mut resp = vec![0.0; n * j];
    let mut diff = vec![0.0; d];
    let mut obj = 0.0;
    for i in 0..n {
        let x = data.row(i);
        let lr = &mut resp[i * j..(i + 1) * j];
        let mut max = f64::NEG_INFINITY;
        for (k, ev) in evals.iter().enumerate() {
            let mu = &params.means[k];
            for c in 0..d {
                diff[c] = x[c] - mu[c];
            }
            let mut q = 0.0;
            for r in 0..d {
                let row = &ev.linv[r * d..r * d + r + 1];
                let z: f64 = row.iter().zip(&diff[..=r]).map(|(a, b)| a * b).sum();
                q += z * z;
            }
            let v = ev.log_const - 0.5 * q;
            lr[k] = v;
            max = max.max(v);
        }
        if !max.is_finite() {
            return Err(Error::numerical(format!("EM: zero likelihood for row {i}")));
        }
        let mut s = 0.0;
        for v in lr.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in lr.iter_mut() {
            *v /= s;
        }
        obj += max + s.ln();
    }
    Ok((obj, resp))
}

/// Plain (unpenalised) log-likelihood.
fn log_likelihood(data: &Data, params: &Params) -> Result<f64> {
    let (obj, _) = e_step(data, params, 0.0)?;
    Ok(obj)
}

/// M-step. Components with effective count below one row or with
/// (unregularised) covariance trace below `ridge * d` are dropped; returns how
/// many were.
fn m_step(data: &Data, resp: &[f64], j: usize, ridge: f64) -> (Params, usize) {
    let (n, d) = (data.n, data.d);
    let mut counts = vec![0.0; j];
    let mut means = vec![vec![0.0; d]; j];
    for i in 0..n {
        let x = data.row(i);
        for k in 0..j {
            let r = resp[i * j + k];
            counts[k] += r;
            for c in 0..d {
                means[k][c] += r * x[c];
            }
        }
    }
    for k in 0..j {
        if counts[k] > 0.0 {
            for m in means[k].iter_mut() {
                *m /= counts[k];
            }
        }
    }
    let mut scatter = vec![vec![0.0; d * d]; j];
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let x = data.row(i);
        for k in 0..j {
            let r = resp[i * j + k];
            if r == 0.0 {
                continue;
            }
            for c in 0..d {
                diff[c] = x[c] - means[k][c];
            }
            let s = &mut scatter[k];
            for a in 0..d {
                let ra = r * diff[a];
                for b in 0..=a {
                    s[a * d + b] += ra * diff[b];
                }
            }
        }
    }
    let mut params = Params {
        weights: Vec::with_capacity(j),
        means: Vec::with_capacity(j),
        covs: Vec::with_capacity(j),
    };
    let mut removed = 0;
    for k in 0..j {
        if counts[k] < 1.0 {
            removed += 1;
            continue;
        }
        let s = &scatter[k];
        let cov = DMatrix::from_fn(d, d, |a, b| {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            s[hi * d + lo] / counts[k]
        });
        if cov.trace() < ridge * d as f64 {
            removed += 1;
            continue;
        }
        params.weights.push(counts[k] / n as f64);
        params.means.push(std::mem::take(&mut means[k]));
        params.covs.push(cov + DMatrix::identity(d, d) * ridge);
    }
    let total: f64 = params.weights.iter().sum();
    for w in &mut params.weights {
        *w /= total;
    }
    (params, removed)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd steps; returns hard
/// responsibilities.
fn kmeans_init(data: &Data, j: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.n;
    let mut centers: Vec<Vec<f64>> = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < j {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &dv) in dist.iter().enumerate() {
                if u < dv {
                    chosen = i;
                    break;
                }
                u -= dv;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(data.row(i), &c));
        }
        centers.push(c);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..3 {
        for (i, a) in assign.iter_mut().enumerate() {
            let x = data.row(i);
            *a = (0..j)
                .min_by(|&p, &q| sq_dist(x, &centers[p]).total_cmp(&sq_dist(x, &centers[q])))
                .unwrap();
        }
        let mut sums = vec![vec![0.0; data.d]; j];
        let mut counts = vec![0usize; j];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for k in 0..j {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    let mut resp = vec![0.0; n * j];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * j + a] = 1.0;
    }
    resp
}

struct RunResult {
    params: Params,
    loglik: f64,
    iters: usize,
    diag: EmDiagnostics,
}

fn run_once(data: &Data, j: usize, cfg: &FitConfig, restart: usize) -> Result<RunResult> {
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, (j as u64) << 32 | restart as u64));
    let resp = kmeans_init(data, j, &mut rng);
    let (mut params, mut removed) = m_step(data, &resp, j, cfg.ridge);
    let mut diag = EmDiagnostics {
        requested_components: j,
        final_components: 0,
        removals: Vec::new(),
        converged: false,
        restart,
        objective_trace: Vec::new(),
    };
    if removed > 0 {
        diag.removals.push(0);
    }
    let mut iters = 0;
    while iters < cfg.em_max_iter {
        let (obj, resp) = e_step(data, &params, cfg.ridge)?;
        iters += 1;
        if let Some(&prev) = diag.objective_trace.last() {
            diag.objective_trace.push(obj);
            if (obj - prev).abs() <= cfg.em_tol * prev.abs() && removed == 0 {
                diag.converged = true;
                break;
            }
        } else {
            diag.objective_trace.push(obj);
        }
        let jk = params.weights.len();
        let (next, r) = m_step(data, &resp, jk, cfg.ridge);
        removed = r;
        if removed > 0 {
            diag.removals.push(iters);
        }
        params = next;
    }
    diag.final_components = params.weights.len();
    let loglik = log_likelihood(data, &params)?;
    Ok(RunResult {
        params,
        loglik,
        iters,
        diag,
    })
}

/// Fits a `j`-component mixture, keeping the best of `cfg.n_restarts`
/// seeded restarts (a single run when `j == 1`).
pub fn em_fit(table: &SimTable, j: usize, cfg: &FitConfig) -> Result<EmFit> {
    EM_CALLS.fetch_add(1, Ordering::SeqCst);
    cfg.validate()?;
    if j == 0 {
        return Err(Error::contract("component count must be at least 1"));
    }
    if table.n() <= j {
        return Err(Error::contract(format!(
            "{} rows cannot support {j} components",
            table.n()
        )));
    }
    let (n, d) = (table.n(), table.dim());
    let flat: Vec<f64> = (0..n)
        .flat_map(|i| table.values().row(i).iter().copied().collect::<Vec<_>>())
        .collect();
    let data = Data { x: &flat, n, d };
    let restarts = if j == 1 { 1 } else { cfg.n_restarts };
    let runs: Vec<Result<RunResult>> = (0..restarts)
        .into_par_iter()
        .map(|r| run_once(&data, j, cfg, r))
        .collect();
    let mut best: Option<RunResult> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.loglik > b.loglik) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or_else(|| Error::numerical("EM produced no fit"))),
    };
    let parts = best
        .params
        .weights
        .iter()
        .zip(&best.params.means)
        .zip(&best.params.covs)
        .map(|((&w, m), c)| (w, DVector::from_column_slice(m), c.clone()))
        .collect();
    let mixture = GaussianMixture::new(table.labels().to_vec(), parts)?;
    Ok(EmFit {
        mixture,
        loglik: best.loglik,
        iters: best.iters,
        diagnostics: best.diag,
    })
}

/// Fits `J = 1..=j_max` and returns the BIC minimiser with the full curve.
pub fn select_model(table: &SimTable, cfg: &FitConfig) -> Result<ModelSelection> {
    cfg.validate()?;
    let (n, d) = (table.n(), table.dim());
    let mut best: Option<(f64, EmFit)> = None;
    let mut curve = Vec::with_capacity(cfg.j_max);
    let mut failures = Vec::new();
    for j in 1..=cfg.j_max.min(n.saturating_sub(1)) {
        match em_fit(table, j, cfg) {
            Ok(fit) => {
                let score = bic(fit.loglik, fit.mixture.n_components(), d, n);
                log::info!("J={j}: loglik={:.3} BIC={score:.3} iters={}", fit.loglik, fit.iters);
                curve.push((j, score));
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    best = Some((score, fit));
                }
            }
            Err(e) => {
                log::warn!("J={j}: fit failed: {e}");
                failures.push((j, e.to_string()));
            }
        }
    }
    match best {
        Some((_, fit)) => Ok(ModelSelection {
            best: fit,
            bic_curve: curve,
            failures,
        }),
        None => Err(Error::numerical(format!(
            "every mixture fit failed: {}",
            failures
                .iter()
                .map(|(j, e)| format!("J={j}: {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
