//! Order-β weak local linearization of a diffusion model at a base point.
//!
//! Around (s, y) the drift and each diffusion column are replaced by affine
//! functions of state and time,
//!   f(t, x) ≈ A·x + a₀ + a₁·(t−s),
//!   gᵢ(t, x) ≈ Bᵢ·x + b_{i,0} + b_{i,1}·(t−s),
//! where the order-2 variant folds the Itô correction ½Σ[GGᵀ]^{jl}∂²/∂xʲ∂xˡ
//! into the linear-in-time coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::DiffusionModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Beta {
    One,
    Two,
}

impl Beta {
    /// The order as an exponent, e.g. for stepsize selection rules that use
    /// 1/(β+1) powers.
    pub fn order(self) -> f64 {
        match self {
            Beta::One => 1.0,
            Beta::Two => 2.0,
        }
    }
}

impl std::str::FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Beta::One),
            "2" => Ok(Beta::Two),
            other => Err(Error::config(format!("order must be 1 or 2, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.order() as i32)
    }
}

/// Affine linearization coefficients at a base point.
#[derive(Clone, Debug)]
pub struct LinearizationData {
    pub base_time: f64,
    pub a_mat: DMatrix<f64>,
    pub b_mats: Vec<DMatrix<f64>>,
    pub a0: DVector<f64>,
    pub a1: DVector<f64>,
    pub b0: Vec<DVector<f64>>,
    pub b1: Vec<DVector<f64>>,
    pub beta: Beta,
}

impl LinearizationData {
    /// Drift intercept at time t: a₀ + a₁·(t−s).
    pub fn a_beta(&self, t: f64) -> DVector<f64> {
        &self.a0 + &self.a1 * (t - self.base_time)
    }

    /// Diffusion intercept i at time t: b_{i,0} + b_{i,1}·(t−s).
    pub fn b_beta(&self, i: usize, t: f64) -> DVector<f64> {
        &self.b0[i] + &self.b1[i] * (t - self.base_time)
    }
}

fn finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// ½·trace(GGᵀ·H) for each component Hessian H, the Itô drift-in-time
/// correction of the order-2 scheme.
fn ito_correction(ggt: &DMatrix<f64>, hess: &[DMatrix<f64>]) -> DVector<f64> {
    DVector::from_iterator(hess.len(), hess.iter().map(|h| 0.5 * (ggt * h).trace()))
}

pub fn linearize(
    m: &dyn DiffusionModel,
    s: f64,
    y_base: &DVector<f64>,
    beta: Beta,
) -> Result<LinearizationData> {
    let d = m.dim();
    let wm = m.wiener_dim();
    if y_base.len() != d {
        return Err(Error::dim(format!(
            "base point has length {}, model dimension is {d}",
            y_base.len()
        )));
    }

    let f = m.drift(s, y_base);
    let a_mat = m.drift_jac(s, y_base);
    if a_mat.nrows() != d || a_mat.ncols() != d {
        return Err(Error::dim("drift_jac must be d x d"));
    }
    let a0 = &f - &a_mat * y_base;
    let mut a1 = m.drift_dt(s, y_base);

    let mut b_mats = Vec::with_capacity(wm);
    let mut b0 = Vec::with_capacity(wm);
    let mut b1 = Vec::with_capacity(wm);
    for i in 0..wm {
        let g = m.diffusion(i, s, y_base);
        let b = m.diffusion_jac(i, s, y_base);
        if b.nrows() != d || b.ncols() != d {
            return Err(Error::dim("diffusion_jac must be d x d"));
        }
        b0.push(&g - &b * y_base);
        b1.push(m.diffusion_dt(i, s, y_base));
        b_mats.push(b);
    }

    if beta == Beta::Two {
        let g = m.diffusion_matrix(s, y_base);
        let ggt = &g * g.transpose();
        let fh = m
            .drift_hess(s, y_base)
            .ok_or_else(|| Error::config("order 2 requires drift Hessians"))?;
        if fh.len() != d {
            return Err(Error::dim("drift_hess must supply one matrix per component"));
        }
        a1 += ito_correction(&ggt, &fh);
        for i in 0..wm {
            let gh = m
                .diffusion_hess(i, s, y_base)
                .ok_or_else(|| Error::config("order 2 requires diffusion Hessians"))?;
            if gh.len() != d {
                return Err(Error::dim(
                    "diffusion_hess must supply one matrix per component",
                ));
            }
            b1[i] += ito_correction(&ggt, &gh);
        }
    }

    let finite = finite_mat(&a_mat)
        && finite_vec(&a0)
        && finite_vec(&a1)
        && b_mats.iter().all(finite_mat)
        && b0.iter().all(finite_vec)
        && b1.iter().all(finite_vec);
    if !finite {
        return Err(Error::model(format!(
            "non-finite linearization coefficients at t = {s}"
        )));
    }

    Ok(LinearizationData {
        base_time: s,
        a_mat,
        b_mats,
        a0,
        a1,
        b0,
        b1,
        beta,
    })
}
