//! State-equation and observation-equation descriptions.
//!
//! A diffusion model is dx = f(t,x)dt + Σᵢ gᵢ(t,x)dwⁱ with analytic
//! derivative bundles supplied by the author; observations are
//! z_k = C·x(t_k) + e_k with e_k ~ N(0, Σ_k).

pub mod augment;
pub mod config;
pub mod examples;
pub mod validate;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Continuous state equation with the derivative bundle needed by order-β
/// linearization. Hessians are optional: requesting β = 2 on a model without
/// them is a configuration error, never a silent fallback.
///
/// Hessian layout: entry k of the returned vector is the d×d Hessian of the
/// k-th component of the drift (or of diffusion column i).
pub trait DiffusionModel: Sync + Send {
    fn dim(&self) -> usize;
    fn wiener_dim(&self) -> usize;

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    fn diffusion(&self, i: usize, t: f64, x: &DVector<f64>) -> DVector<f64>;

    fn drift_jac(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
    fn drift_dt(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    fn diffusion_jac(&self, i: usize, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
    fn diffusion_dt(&self, i: usize, t: f64, x: &DVector<f64>) -> DVector<f64>;

    fn drift_hess(&self, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    fn diffusion_hess(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// Diffusion columns assembled into the d×m matrix G = [g₁ … g_m].
    fn diffusion_matrix(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let m = self.wiener_dim();
        let mut g = DMatrix::zeros(d, m);
        for i in 0..m {
            g.set_column(i, &self.diffusion(i, t, x));
        }
        g
    }
}

/// Observation-noise covariance: one matrix for all instants, or one per
/// observation.
#[derive(Clone, Debug)]
pub enum NoiseCov {
    Constant(DMatrix<f64>),
    PerObservation(Vec<DMatrix<f64>>),
}

/// Linear discrete observation scheme z_k = C·x(t_k) + e_k.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    pub c: DMatrix<f64>,
    pub noise: NoiseCov,
    pub times: Vec<f64>,
}

pub(crate) fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!("{what} must be square")));
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid(format!("{what} is not symmetric")));
    }
    let eig = nalgebra::SymmetricEigen::new(0.5 * (m + m.transpose()));
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::invalid(format!(
            "{what} has negative eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

impl ObservationModel {
    pub fn new(c: DMatrix<f64>, noise: NoiseCov, times: Vec<f64>) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "observation times must be strictly increasing".to_string(),
            ));
        }
        match &noise {
            NoiseCov::Constant(s) => {
                check_psd(s, "observation noise covariance")?;
                if s.nrows() != c.nrows() {
                    return Err(Error::dim("noise covariance does not match C rows"));
                }
            }
            NoiseCov::PerObservation(list) => {
                if list.len() != times.len() {
                    return Err(Error::dim(
                        "per-observation noise list does not match times",
                    ));
                }
                for s in list {
                    check_psd(s, "observation noise covariance")?;
                    if s.nrows() != c.nrows() {
                        return Err(Error::dim("noise covariance does not match C rows"));
                    }
                }
            }
        }
        Ok(ObservationModel { c, noise, times })
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    /// Noise covariance at observation index k.
    pub fn sigma_at(&self, k: usize) -> Result<&DMatrix<f64>> {
        match &self.noise {
            NoiseCov::Constant(s) => Ok(s),
            NoiseCov::PerObservation(list) => list
                .get(k)
                .ok_or_else(|| Error::invalid(format!("no observation index {k}"))),
        }
    }
}

/// A noisy observation record: times paired with measured values.
#[derive(Clone, Debug)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::dim("observation times/values length mismatch"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "observation times must be strictly increasing".to_string(),
            ));
        }
        Ok(ObservationSeries { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

type VecFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Sync + Send;
type MatFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Sync + Send;
type HessFn = dyn Fn(f64, &DVector<f64>) -> Vec<DMatrix<f64>> + Sync + Send;

/// Nonlinear observation map h(t, x) with the derivative bundle required by
/// the state-augmentation transform.
pub struct NonlinearObservation {
    pub obs_dim: usize,
    pub h: Box<VecFn>,
    pub h_jac: Box<MatFn>,
    pub h_dt: Box<VecFn>,
    pub h_hess: Box<HessFn>,
}

pub use augment::{augment_nonlinear_observation, AugmentedModel};
pub use config::FileConfig;
pub use examples::{build_example, ExampleId, ExampleSpec};
pub use validate::{validate_model, DerivativeCheck, ValidationReport};
