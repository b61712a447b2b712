//! JSON parameter files for the registered benchmark models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Optional parameter overrides loaded from a JSON config file. Every field
/// defaults to the registered model's built-in value when absent. Unknown
/// keys are rejected so typos surface instead of silently using defaults.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub a: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub p: Option<f64>,
    pub varpi: Option<f64>,
    pub t0: Option<f64>,
    /// Observation-noise variance (scalar observation).
    #[serde(rename = "Sigma")]
    pub sigma_obs: Option<f64>,
    pub x0: Option<Vec<f64>>,
    /// Initial second moment E[x₀x₀ᵀ], row-major.
    #[serde(rename = "Q0")]
    pub q0: Option<Vec<Vec<f64>>>,
    pub rtol_y: Option<f64>,
    pub atol_y: Option<f64>,
    #[serde(rename = "rtol_P")]
    pub rtol_p: Option<f64>,
    #[serde(rename = "atol_P")]
    pub atol_p: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub prs: Option<f64>,
}

impl FileConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Overlay the step-control keys onto `base`, leaving absent keys alone.
    pub fn apply_adaptive(&self, base: &mut crate::adaptive::AdaptiveConfig) {
        if let Some(v) = self.rtol_y {
            base.rtol_y = v;
        }
        if let Some(v) = self.atol_y {
            base.atol_y = v;
        }
        if let Some(v) = self.rtol_p {
            base.rtol_p = v;
        }
        if let Some(v) = self.atol_p {
            base.atol_p = v;
        }
        if let Some(v) = self.h_min {
            base.h_min = v;
        }
        if let Some(v) = self.h_max {
            base.h_max = Some(v);
        }
        if let Some(v) = self.prs {
            base.prs = v;
        }
    }
}
