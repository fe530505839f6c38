use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::collections::HashSet;
use std::path::Path;

/// Prior-predictive draws: parameters in the leading `param_count` columns,
/// summaries after them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTable {
    labels: Vec<String>,
    values: DMatrix<f64>,
    param_count: usize,
}

impl SimTable {
    pub fn new(labels: Vec<String>, values: DMatrix<f64>, param_count: usize) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::contract(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        if param_count > labels.len() {
            return Err(Error::contract("param_count exceeds column count"));
        }
        if labels.iter().collect::<HashSet<_>>().len() != labels.len() {
            return Err(Error::contract("table labels must be unique"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::contract(format!(
                "non-finite value in row {r}, column `{}`",
                labels[c]
            )));
        }
        if values.nrows() < 10 * labels.len() {
            log::warn!(
                "table has {} rows for {} columns; fits below 10 rows per column are unreliable",
                values.nrows(),
                labels.len()
            );
        }
        Ok(Self {
            labels,
            values,
            param_count,
        })
    }

    pub fn from_rows(labels: Vec<String>, rows: &[Vec<f64>], param_count: usize) -> Result<Self> {
        let d = labels.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::contract("ragged rows"));
        }
        let values = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(labels, values, param_count)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn param_count(&self) -> usize {
        self.param_count
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            labels: self.labels.clone(),
            values,
            param_count: self.param_count,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(&self.labels)?;
        for i in 0..self.n() {
            w.write_record(self.values.row(i).iter().map(|v| v.to_string()))?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, param_count: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let labels: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::contract(format!("row {i}: cannot parse `{s}` as a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(labels, &rows, param_count)
    }
}
