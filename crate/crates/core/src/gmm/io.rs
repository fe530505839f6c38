use super::GaussianMixture;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MIXTURE_SCHEMA_VERSION: u32 = 1;

/// On-disk form of a mixture. Covariances are stored in full, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureDoc {
    pub version: u32,
    pub labels: Vec<String>,
    pub components: Vec<ComponentDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Reads the `version` field before anything else so a mismatch is reported
/// as such rather than as a shape error.
pub(crate) fn check_version(value: &serde_json::Value, artifact: &str, expected: u32) -> Result<()> {
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::contract(format!("{artifact}: missing `version` field")))?;
    if found != expected as u64 {
        return Err(Error::SchemaVersion {
            artifact: artifact.to_string(),
            found: found as u32,
            expected,
        });
    }
    Ok(())
}

impl GaussianMixture {
    pub fn to_doc(&self) -> MixtureDoc {
        MixtureDoc {
            version: MIXTURE_SCHEMA_VERSION,
            labels: self.labels.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentDoc {
                    weight: c.weight(),
                    mean: c.mean().iter().copied().collect(),
                    cov: (0..c.cov().nrows())
                        .map(|i| c.cov().row(i).iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: MixtureDoc) -> Result<Self> {
        if doc.version != MIXTURE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                artifact: "mixture".into(),
                found: doc.version,
                expected: MIXTURE_SCHEMA_VERSION,
            });
        }
        let d = doc.labels.len();
        let mut parts = Vec::with_capacity(doc.components.len());
        for (j, c) in doc.components.into_iter().enumerate() {
            if c.mean.len() != d || c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
                return Err(Error::contract(format!(
                    "mixture component {j} does not match {d} labels"
                )));
            }
            let cov = DMatrix::from_fn(d, d, |r, s| c.cov[r][s]);
            parts.push((c.weight, DVector::from_vec(c.mean), cov));
        }
        GaussianMixture::new(doc.labels, parts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value, "mixture", MIXTURE_SCHEMA_VERSION)?;
        Self::from_doc(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
