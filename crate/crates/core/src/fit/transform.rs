//! Per-variable monotone maps to standard-normal margins: `z = Φ⁻¹(F(x))`.

use super::table::SimTable;
use crate::error::{Error, Result};
use crate::gmm::io::check_version;
use crate::stats::{norm_cdf, norm_pdf, norm_ppf};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const TRANSFORM_SCHEMA_VERSION: u32 = 1;

/// Window, in bandwidths, outside which a Gaussian kernel CDF term is 0 or 1
/// to double precision.
const KERNEL_REACH: f64 = 8.5;
const ANALYTIC_CLAMP: f64 = 1e-12;

/// Closed-form prior CDF for a column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum AnalyticCdf {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdfKind {
    Analytic {
        cdf: AnalyticCdf,
    },
    /// Gaussian-kernel smoothed empirical CDF, evaluated exactly at `knots`
    /// and linearly interpolated between them.
    Kernel {
        bandwidth: f64,
        knots: Vec<f64>,
        cdf: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableTransform {
    pub label: String,
    pub kind: CdfKind,
    pub u_lo: f64,
    pub u_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTransform {
    pub version: u32,
    pub variables: Vec<VariableTransform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformOptions {
    /// Knots placed uniformly over the training range.
    pub knots: usize,
    /// Multiplier on the Silverman bandwidth `1.06 σ̂ n^{-1/5}`.
    pub bandwidth_scale: f64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            knots: 2048,
            bandwidth_scale: 1.0,
        }
    }
}

/// Builds a transform for every column of `table`. Columns named in
/// `analytic` use that CDF; all others get the smoothed empirical CDF.
pub fn build_transform(
    table: &SimTable,
    analytic: &BTreeMap<String, AnalyticCdf>,
    opts: &TransformOptions,
) -> Result<MarginalTransform> {
    for name in analytic.keys() {
        if !table.labels().iter().any(|l| l == name) {
            return Err(Error::contract(format!(
                "analytic CDF given for unknown column `{name}`"
            )));
        }
    }
    let variables = table
        .labels()
        .iter()
        .enumerate()
        .map(|(j, label)| match analytic.get(label) {
            Some(cdf) => analytic_variable(label, *cdf),
            None => kernel_variable(label, table.column(j), opts),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarginalTransform {
        version: TRANSFORM_SCHEMA_VERSION,
        variables,
    })
}

fn analytic_variable(label: &str, cdf: AnalyticCdf) -> Result<VariableTransform> {
    match cdf {
        AnalyticCdf::Uniform { lo, hi } if !(hi > lo) => {
            return Err(Error::Config(format!("`{label}`: empty uniform support")))
        }
        AnalyticCdf::Normal { sd, .. } if !(sd > 0.0) => {
            return Err(Error::Config(format!("`{label}`: normal sd must be positive")))
        }
        _ => {}
    }
    Ok(VariableTransform {
        label: label.to_string(),
        kind: CdfKind::Analytic { cdf },
        u_lo: ANALYTIC_CLAMP,
        u_hi: 1.0 - ANALYTIC_CLAMP,
    })
}

fn kernel_variable(label: &str, mut xs: Vec<f64>, opts: &TransformOptions) -> Result<VariableTransform> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Degenerate(label.to_string()));
    }
    xs.sort_by(f64::total_cmp);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) || xs[0] == xs[n - 1] {
        return Err(Error::Degenerate(label.to_string()));
    }
    let h = opts.bandwidth_scale * 1.06 * sd * (n as f64).powf(-0.2);
    let (lo, hi) = (xs[0], xs[n - 1]);
    let k = opts.knots.max(16);
    let tail = (k / 8).max(16);
    let mut knots = Vec::with_capacity(k + 2 * tail);
    // tails: min - reach*h .. min (exclusive), then the training range, then
    // max .. max + reach*h
    let reach = KERNEL_REACH * h;
    for i in 0..tail {
        knots.push(lo - reach + reach * i as f64 / tail as f64);
    }
    for i in 0..k {
        knots.push(if i == k - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (k - 1) as f64
        });
    }
    for i in 1..=tail {
        knots.push(hi + reach * i as f64 / tail as f64);
    }
    let cdf_vals: Vec<f64> = knots.iter().map(|&t| kernel_cdf(&xs, h, t)).collect();
    // keep a strictly increasing subsequence (far tails can round to equal values)
    let mut kk = Vec::with_capacity(knots.len());
    let mut cc = Vec::with_capacity(knots.len());
    for (t, c) in knots.into_iter().zip(cdf_vals) {
        if cc.last().is_none_or(|&last| c > last) && kk.last().is_none_or(|&last| t > last) {
            kk.push(t);
            cc.push(c);
        }
    }
    let nf = n as f64;
    let var = VariableTransform {
        label: label.to_string(),
        kind: CdfKind::Kernel {
            bandwidth: h,
            knots: kk,
            cdf: cc,
        },
        u_lo: 1.0 / (2.0 * nf),
        u_hi: 1.0 - 1.0 / (2.0 * nf),
    };
    let z: Vec<f64> = xs.iter().map(|&x| var.forward(x).0).collect();
    let m = crate::stats::moments(&z);
    if m.mean.abs() > 0.05 || (m.var - 1.0).abs() > 0.1 {
        log::warn!(
            "`{label}`: transformed column has mean {:.3}, variance {:.3}; consider a smaller bandwidth_scale",
            m.mean,
            m.var
        );
    }
    Ok(var)
}

/// `(1/n) Σ Φ((t - x_i)/h)` over sorted `xs`, summing only the kernel window.
fn kernel_cdf(xs: &[f64], h: f64, t: f64) -> f64 {
    let below = xs.partition_point(|&x| x < t - KERNEL_REACH * h);
    let above = xs.partition_point(|&x| x <= t + KERNEL_REACH * h);
    let window: f64 = xs[below..above].iter().map(|&x| norm_cdf((t - x) / h)).sum();
    (below as f64 + window) / xs.len() as f64
}

impl VariableTransform {
    /// `F(x)` before clamping.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.kind {
            CdfKind::Analytic { cdf } => match *cdf {
                AnalyticCdf::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
                AnalyticCdf::Normal { mean, sd } => norm_cdf((x - mean) / sd),
            },
            CdfKind::Kernel { knots, cdf, .. } => {
                let last = knots.len() - 1;
                if x <= knots[0] {
                    return cdf[0];
                }
                if x >= knots[last] {
                    return cdf[last];
                }
                let k = knots.partition_point(|&t| t <= x) - 1;
                let f = (x - knots[k]) / (knots[k + 1] - knots[k]);
                cdf[k] + f * (cdf[k + 1] - cdf[k])
            }
        }
    }

    fn inv_cdf(&self, u: f64) -> f64 {
        match &self.kind {
            CdfKind::Analytic { cdf } => match *cdf {
                AnalyticCdf::Uniform { lo, hi } => lo + u * (hi - lo),
                AnalyticCdf::Normal { mean, sd } => mean + sd * norm_ppf(u),
            },
            CdfKind::Kernel { knots, cdf, .. } => {
                let last = cdf.len() - 1;
                if u <= cdf[0] {
                    return knots[0];
                }
                if u >= cdf[last] {
                    return knots[last];
                }
                let k = cdf.partition_point(|&c| c <= u) - 1;
                let f = (u - cdf[k]) / (cdf[k + 1] - cdf[k]);
                knots[k] + f * (knots[k + 1] - knots[k])
            }
        }
    }

    /// `z = Φ⁻¹(F(x))`, with `F(x)` clamped into `[u_lo, u_hi]`. The flag
    /// reports whether clamping happened.
    pub fn forward(&self, x: f64) -> (f64, bool) {
        if let CdfKind::Analytic {
            cdf: AnalyticCdf::Normal { mean, sd },
        } = self.kind
        {
            return ((x - mean) / sd, false);
        }
        let u = self.cdf(x);
        let clamped = u.clamp(self.u_lo, self.u_hi);
        (norm_ppf(clamped), clamped != u)
    }

    pub fn inverse(&self, z: f64) -> f64 {
        if let CdfKind::Analytic {
            cdf: AnalyticCdf::Normal { mean, sd },
        } = self.kind
        {
            return mean + sd * z;
        }
        self.inv_cdf(norm_cdf(z).clamp(self.u_lo, self.u_hi))
    }

    /// `dz/dx` at original-scale `x`: `f_X(x) / φ(z)`.
    pub fn dz_dx(&self, x: f64) -> f64 {
        let (z, _) = self.forward(x);
        let fx = match &self.kind {
            CdfKind::Analytic { cdf } => match *cdf {
                AnalyticCdf::Uniform { lo, hi } => {
                    if x < lo || x > hi {
                        0.0
                    } else {
                        1.0 / (hi - lo)
                    }
                }
                AnalyticCdf::Normal { sd, .. } => return 1.0 / sd,
            },
            CdfKind::Kernel { knots, cdf, .. } => {
                let last = knots.len() - 1;
                if x < knots[0] || x > knots[last] {
                    0.0
                } else {
                    let k = (knots.partition_point(|&t| t <= x).max(1) - 1).min(last - 1);
                    (cdf[k + 1] - cdf[k]) / (knots[k + 1] - knots[k])
                }
            }
        };
        fx / norm_pdf(z)
    }
}

impl MarginalTransform {
    pub fn labels(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.label.clone()).collect()
    }

    pub fn variable(&self, label: &str) -> Result<&VariableTransform> {
        self.variables
            .iter()
            .find(|v| v.label == label)
            .ok_or_else(|| Error::contract(format!("no transform for `{label}`")))
    }

    /// Elementwise `z = Φ⁻¹(F(x))`. Returns the transformed table and the
    /// number of clamped entries.
    pub fn to_normal(&self, table: &SimTable) -> Result<(SimTable, usize)> {
        self.check_labels(table.labels())?;
        let mut clamped = 0;
        let mut out = table.values().clone();
        for (j, var) in self.variables.iter().enumerate() {
            for i in 0..out.nrows() {
                let (z, c) = var.forward(out[(i, j)]);
                clamped += c as usize;
                out[(i, j)] = z;
            }
        }
        Ok((table.with_values(out), clamped))
    }

    /// Inverse map for the rows of `points`, whose columns follow `labels`.
    pub fn from_normal(&self, points: &DMatrix<f64>, labels: &[String]) -> Result<DMatrix<f64>> {
        if labels.len() != points.ncols() {
            return Err(Error::contract("label count does not match point columns"));
        }
        let vars = labels.iter().map(|l| self.variable(l)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(points.nrows(), points.ncols(), |i, j| {
            vars[j].inverse(points[(i, j)])
        }))
    }

    /// Forward map of a single point given by `(label, value)` pairs.
    pub fn forward_point(&self, labels: &[String], xs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let mut clamped = 0;
        let z = labels
            .iter()
            .zip(xs)
            .map(|(l, &x)| {
                let (z, c) = self.variable(l)?.forward(x);
                clamped += c as usize;
                Ok(z)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((z, clamped))
    }

    fn check_labels(&self, labels: &[String]) -> Result<()> {
        if self.variables.len() != labels.len() || self.variables.iter().zip(labels).any(|(v, l)| &v.label != l) {
            return Err(Error::contract("transform labels do not match the table"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value, "transform", TRANSFORM_SCHEMA_VERSION)?;
        let tf: Self = serde_json::from_value(value)?;
        for v in &tf.variables {
            if let CdfKind::Kernel { knots, cdf, .. } = &v.kind {
                let ok = knots.len() == cdf.len()
                    && knots.len() >= 2
                    && knots.windows(2).all(|w| w[1] > w[0])
                    && cdf.windows(2).all(|w| w[1] > w[0]);
                if !ok {
                    return Err(Error::contract(format!(
                        "transform for `{}` is not strictly increasing",
                        v.label
                    )));
                }
            }
        }
        Ok(tf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
