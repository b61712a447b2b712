//! The four registered benchmark models and their stock parameterizations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde_json::json;

use crate::adaptive::AdaptiveConfig;
use crate::error::{Error, Result};
use crate::model::{check_psd, DiffusionModel, FileConfig, NoiseCov, ObservationModel};
use crate::moments::MomentState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExampleId {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] = [ExampleId::Ex1, ExampleId::Ex2, ExampleId::Ex3, ExampleId::Ex4];

    pub fn dim(self) -> usize {
        match self {
            ExampleId::Ex1 | ExampleId::Ex2 => 1,
            ExampleId::Ex3 | ExampleId::Ex4 => 2,
        }
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ex1" | "1" => Ok(ExampleId::Ex1),
            "ex2" | "2" => Ok(ExampleId::Ex2),
            "ex3" | "3" => Ok(ExampleId::Ex3),
            "ex4" | "4" => Ok(ExampleId::Ex4),
            other => Err(Error::config(format!(
                "unknown example id {other:?}; expected ex1..ex4"
            ))),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExampleId::Ex1 => "ex1",
            ExampleId::Ex2 => "ex2",
            ExampleId::Ex3 => "ex3",
            ExampleId::Ex4 => "ex4",
        };
        f.write_str(s)
    }
}

/// dx = a·t·x dt + σ·√t·x dw, valid for t > 0.
pub struct Ex1Model {
    pub a: f64,
    pub sigma: f64,
}

impl DiffusionModel for Ex1Model {
    fn dim(&self) -> usize {
        1
    }

    fn wiener_dim(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.a * t * x[0]]
    }

    fn diffusion(&self, _i: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.sigma * t.sqrt() * x[0]]
    }

    fn drift_jac(&self, t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a * t)
    }

    fn drift_dt(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.a * x[0]]
    }

    fn diffusion_jac(&self, _i: usize, t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.sigma * t.sqrt())
    }

    fn diffusion_dt(&self, _i: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.sigma * x[0] / (2.0 * t.sqrt())]
    }

    fn drift_hess(&self, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }

    fn diffusion_hess(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }
}

/// dx = a·t·x dt + σ₁·tᵖ·e^{a·t²/2} dw¹ + σ₂·√t dw², valid for t > 0.
pub struct Ex2Model {
    pub a: f64,
    pub p: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl DiffusionModel for Ex2Model {
    fn dim(&self) -> usize {
        1
    }

    fn wiener_dim(&self) -> usize {
        2
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.a * t * x[0]]
    }

    fn diffusion(&self, i: usize, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => dvector![self.sigma1 * t.powf(self.p) * (0.5 * self.a * t * t).exp()],
            _ => dvector![self.sigma2 * t.sqrt()],
        }
    }

    fn drift_jac(&self, t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a * t)
    }

    fn drift_dt(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![self.a * x[0]]
    }

    fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn diffusion_dt(&self, i: usize, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => dvector![
                self.sigma1
                    * (self.p * t.powf(self.p - 1.0) + self.a * t.powf(self.p + 1.0))
                    * (0.5 * self.a * t * t).exp()
            ],
            _ => dvector![self.sigma2 / (2.0 * t.sqrt())],
        }
    }

    fn drift_hess(&self, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }

    fn diffusion_hess(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }
}

/// Van der Pol oscillator with constant forcing and additive noise:
/// dx₁ = x₂ dt, dx₂ = (−(x₁²−1)x₂ − x₁ + a) dt + σ dw.
pub struct Ex3Model {
    pub a: f64,
    pub sigma: f64,
}

fn vdp_drift_rows(x: &DVector<f64>, restoring: f64, forcing: f64) -> DVector<f64> {
    let (x1, x2) = (x[0], x[1]);
    dvector![x2, -(x1 * x1 - 1.0) * x2 - restoring * x1 + forcing]
}

fn vdp_drift_jac(x: &DVector<f64>, restoring: f64) -> DMatrix<f64> {
    let (x1, x2) = (x[0], x[1]);
    dmatrix![0.0, 1.0; -2.0 * x1 * x2 - restoring, -(x1 * x1 - 1.0)]
}

fn vdp_drift_hess(x: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let (x1, x2) = (x[0], x[1]);
    vec![
        DMatrix::zeros(2, 2),
        dmatrix![-2.0 * x2, -2.0 * x1; -2.0 * x1, 0.0],
    ]
}

impl DiffusionModel for Ex3Model {
    fn dim(&self) -> usize {
        2
    }

    fn wiener_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        vdp_drift_rows(x, 1.0, self.a)
    }

    fn diffusion(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        dvector![0.0, self.sigma]
    }

    fn drift_jac(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        vdp_drift_jac(x, 1.0)
    }

    fn drift_dt(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }

    fn diffusion_dt(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn drift_hess(&self, _t: f64, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vdp_drift_hess(x))
    }

    fn diffusion_hess(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)])
    }
}

/// Van der Pol oscillator with multiplicative noise:
/// dx₁ = x₂ dt, dx₂ = (−(x₁²−1)x₂ − ϖx₁) dt + σx₁ dw.
pub struct Ex4Model {
    pub varpi: f64,
    pub sigma: f64,
}

impl DiffusionModel for Ex4Model {
    fn dim(&self) -> usize {
        2
    }

    fn wiener_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        vdp_drift_rows(x, self.varpi, 0.0)
    }

    fn diffusion(&self, _i: usize, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        dvector![0.0, self.sigma * x[0]]
    }

    fn drift_jac(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        vdp_drift_jac(x, self.varpi)
    }

    fn drift_dt(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![0.0, 0.0; self.sigma, 0.0]
    }

    fn diffusion_dt(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn drift_hess(&self, _t: f64, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vdp_drift_hess(x))
    }

    fn diffusion_hess(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)])
    }
}

/// A fully instantiated benchmark setup: model, observation scheme skeleton,
/// and the initial first/second moments.
pub struct ExampleSpec {
    pub id: ExampleId,
    pub model: Arc<dyn DiffusionModel>,
    pub c: DMatrix<f64>,
    /// Observation-noise covariance, constant across instants.
    pub sigma_obs: DMatrix<f64>,
    pub t0: f64,
    pub x0: DVector<f64>,
    /// Initial second moment E[x₀x₀ᵀ].
    pub q0: DMatrix<f64>,
    /// True when every diffusion column is state-independent.
    pub additive_noise: bool,
    /// Model parameters actually in effect, for run summaries.
    pub params: serde_json::Value,
}

impl ExampleSpec {
    /// Observation instants t₀ + k·spacing for k = 0..n_obs.
    pub fn observation_model(&self, n_obs: usize, spacing: f64) -> Result<ObservationModel> {
        if n_obs == 0 || spacing <= 0.0 {
            return Err(Error::invalid("need n_obs >= 1 and spacing > 0"));
        }
        let times = (0..n_obs).map(|k| self.t0 + k as f64 * spacing).collect();
        ObservationModel::new(
            self.c.clone(),
            NoiseCov::Constant(self.sigma_obs.clone()),
            times,
        )
    }

    /// Initial moments (y₀, P₀) = (x₀, Q₀).
    pub fn initial_state(&self) -> Result<MomentState> {
        MomentState::new(self.t0, self.x0.clone(), self.q0.clone())
    }

    /// The stock per-example adaptive tolerances.
    pub fn default_adaptive(&self) -> AdaptiveConfig {
        let (rtol, atol_y, atol_p) = match self.id {
            ExampleId::Ex1 => (5e-9, 5e-9, 5e-12),
            ExampleId::Ex2 | ExampleId::Ex3 => (5e-8, 5e-8, 5e-11),
            ExampleId::Ex4 => (1e-7, 1e-7, 1e-10),
        };
        AdaptiveConfig {
            rtol_y: rtol,
            atol_y,
            rtol_p: rtol,
            atol_p,
            ..AdaptiveConfig::default()
        }
    }
}

struct FieldUse {
    name: &'static str,
    present: bool,
}

fn reject_inapplicable(cfg: &FileConfig, id: ExampleId, allowed: &[&str]) -> Result<()> {
    let fields = [
        FieldUse { name: "a", present: cfg.a.is_some() },
        FieldUse { name: "sigma", present: cfg.sigma.is_some() },
        FieldUse { name: "sigma1", present: cfg.sigma1.is_some() },
        FieldUse { name: "sigma2", present: cfg.sigma2.is_some() },
        FieldUse { name: "p", present: cfg.p.is_some() },
        FieldUse { name: "varpi", present: cfg.varpi.is_some() },
    ];
    for f in fields {
        if f.present && !allowed.contains(&f.name) {
            return Err(Error::config(format!(
                "parameter {:?} does not apply to {id}",
                f.name
            )));
        }
    }
    Ok(())
}

fn resolve_initials(
    cfg: &FileConfig,
    d: usize,
    t0_default: f64,
    x0_default: DVector<f64>,
    q0_default: DMatrix<f64>,
    sigma_default: f64,
) -> Result<(f64, DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let t0 = cfg.t0.unwrap_or(t0_default);
    let x0 = match &cfg.x0 {
        Some(v) => {
            if v.len() != d {
                return Err(Error::dim(format!("x0 must have length {d}")));
            }
            DVector::from_column_slice(v)
        }
        None => x0_default,
    };
    let q0 = match &cfg.q0 {
        Some(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::dim(format!("Q0 must be {d}x{d}")));
            }
            DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied())
        }
        None => q0_default,
    };
    check_psd(&q0, "Q0")?;
    let sigma_obs = DMatrix::from_element(1, 1, cfg.sigma_obs.unwrap_or(sigma_default));
    check_psd(&sigma_obs, "Sigma")?;
    Ok((t0, x0, q0, sigma_obs))
}

/// Instantiate a registered benchmark model, applying config overrides on top
/// of the stock defaults.
pub fn build_example(id: ExampleId, cfg: &FileConfig) -> Result<ExampleSpec> {
    let d = id.dim();
    match id {
        ExampleId::Ex1 => {
            reject_inapplicable(cfg, id, &["a", "sigma"])?;
            let a = cfg.a.unwrap_or(-0.1);
            let sigma = cfg.sigma.unwrap_or(0.1);
            let (t0, x0, q0, sigma_obs) =
                resolve_initials(cfg, d, 0.5, dvector![1.0], dmatrix![1.0], 1e-4)?;
            if t0 <= 0.0 {
                return Err(Error::config("ex1 needs t0 > 0 (√t diffusion)"));
            }
            Ok(ExampleSpec {
                id,
                model: Arc::new(Ex1Model { a, sigma }),
                c: DMatrix::identity(1, 1),
                sigma_obs,
                t0,
                x0,
                q0,
                additive_noise: false,
                params: json!({"a": a, "sigma": sigma}),
            })
        }
        ExampleId::Ex2 => {
            reject_inapplicable(cfg, id, &["a", "p", "sigma1", "sigma2"])?;
            let a = cfg.a.unwrap_or(-0.25);
            let p = cfg.p.unwrap_or(2.0);
            let sigma1 = cfg.sigma1.unwrap_or(5.0);
            let sigma2 = cfg.sigma2.unwrap_or(0.1);
            let (t0, x0, q0, sigma_obs) =
                resolve_initials(cfg, d, 0.01, dvector![10.0], dmatrix![100.0], 1e-4)?;
            if t0 <= 0.0 {
                return Err(Error::config("ex2 needs t0 > 0 (√t diffusion)"));
            }
            Ok(ExampleSpec {
                id,
                model: Arc::new(Ex2Model { a, p, sigma1, sigma2 }),
                c: DMatrix::identity(1, 1),
                sigma_obs,
                t0,
                x0,
                q0,
                additive_noise: true,
                params: json!({"a": a, "p": p, "sigma1": sigma1, "sigma2": sigma2}),
            })
        }
        ExampleId::Ex3 => {
            reject_inapplicable(cfg, id, &["a", "sigma"])?;
            let a = cfg.a.unwrap_or(0.5);
            let sigma = cfg.sigma.unwrap_or(0.75);
            let (t0, x0, q0, sigma_obs) = resolve_initials(
                cfg,
                d,
                0.0,
                dvector![1.0, 1.0],
                dmatrix![1.0, 1.0; 1.0, 1.0],
                1e-3,
            )?;
            Ok(ExampleSpec {
                id,
                model: Arc::new(Ex3Model { a, sigma }),
                c: dmatrix![1.0, 0.0],
                sigma_obs,
                t0,
                x0,
                q0,
                additive_noise: true,
                params: json!({"a": a, "sigma": sigma}),
            })
        }
        ExampleId::Ex4 => {
            reject_inapplicable(cfg, id, &["varpi", "sigma"])?;
            let varpi = cfg.varpi.unwrap_or(1.0);
            let sigma = cfg.sigma.unwrap_or(1.0);
            let (t0, x0, q0, sigma_obs) = resolve_initials(
                cfg,
                d,
                0.0,
                dvector![1.0, 1.0],
                dmatrix![1.0, 1.0; 1.0, 1.0],
                1e-3,
            )?;
            Ok(ExampleSpec {
                id,
                model: Arc::new(Ex4Model { varpi, sigma }),
                c: dmatrix![1.0, 0.0],
                sigma_obs,
                t0,
                x0,
                q0,
                additive_noise: false,
                params: json!({"varpi": varpi, "sigma": sigma}),
            })
        }
    }
}
