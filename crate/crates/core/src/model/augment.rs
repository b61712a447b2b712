//! State augmentation turning a nonlinear observation map into a linear one.
//!
//! The augmented state is v = [x; h(t, x)]; Ito's formula gives the extra
//! drift rows ρ and diffusion rows σᵢ, and the observation becomes
//! C'·v with C' = [0  I_r].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, NoiseCov, NonlinearObservation, ObservationModel};

/// Diffusion model on the augmented state [x; h].
///
/// Drift and diffusion values are exact; the Jacobian rows of ρ fall back to
/// high-order finite differences because they would need third derivatives of
/// h, which the observation bundle does not carry. Hessians are not exposed,
/// so order-2 linearization of an augmented model is a configuration error.
pub struct AugmentedModel {
    inner: Arc<dyn DiffusionModel>,
    obs: NonlinearObservation,
    d: usize,
    r: usize,
}

impl AugmentedModel {
    fn x_part(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&v.as_slice()[..self.d])
    }

    /// ρʲ = ∂hʲ/∂t + Σ_k f^k ∂hʲ/∂x^k + ½ Σ_s Σ_{l,k} g_s^l g_s^k ∂²hʲ/∂x^l∂x^k
    fn rho(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let f = self.inner.drift(t, x);
        let jac = (self.obs.h_jac)(t, x);
        let hess = (self.obs.h_hess)(t, x);
        let mut rho = (self.obs.h_dt)(t, x) + &jac * &f;
        for s in 0..self.inner.wiener_dim() {
            let g = self.inner.diffusion(s, t, x);
            for (j, hj) in hess.iter().enumerate() {
                rho[j] += 0.5 * (g.transpose() * hj * &g)[(0, 0)];
            }
        }
        rho
    }

    /// σ_sʲ = Σ_l g_s^l ∂hʲ/∂x^l
    fn sigma_col(&self, i: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.obs.h_jac)(t, x) * self.inner.diffusion(i, t, x)
    }
}

// Fourth-order central difference; error O(h⁴) + O(eps/h).
fn diff4<F: Fn(f64) -> DVector<f64>>(f: F, u: f64, h: f64) -> DVector<f64> {
    (-f(u + 2.0 * h) + 8.0 * f(u + h) - 8.0 * f(u - h) + f(u - 2.0 * h)) / (12.0 * h)
}

impl DiffusionModel for AugmentedModel {
    fn dim(&self) -> usize {
        self.d + self.r
    }

    fn wiener_dim(&self) -> usize {
        self.inner.wiener_dim()
    }

    fn drift(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let x = self.x_part(v);
        let f = self.inner.drift(t, &x);
        let rho = self.rho(t, &x);
        let mut out = DVector::zeros(self.d + self.r);
        out.rows_mut(0, self.d).copy_from(&f);
        out.rows_mut(self.d, self.r).copy_from(&rho);
        out
    }

    fn diffusion(&self, i: usize, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let x = self.x_part(v);
        let g = self.inner.diffusion(i, t, &x);
        let sig = self.sigma_col(i, t, &x);
        let mut out = DVector::zeros(self.d + self.r);
        out.rows_mut(0, self.d).copy_from(&g);
        out.rows_mut(self.d, self.r).copy_from(&sig);
        out
    }

    fn drift_jac(&self, t: f64, v: &DVector<f64>) -> DMatrix<f64> {
        let x = self.x_part(v);
        let n = self.d + self.r;
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (self.d, self.d))
            .copy_from(&self.inner.drift_jac(t, &x));
        // ρ depends only on the x-part; differentiate it numerically.
        for j in 0..self.d {
            let h = 1e-3 * (1.0 + x[j].abs());
            let col = diff4(
                |u| {
                    let mut xs = x.clone();
                    xs[j] = u;
                    self.rho(t, &xs)
                },
                x[j],
                h,
            );
            jac.view_mut((self.d, j), (self.r, 1)).copy_from(&col);
        }
        jac
    }

    fn drift_dt(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let x = self.x_part(v);
        let mut out = DVector::zeros(self.d + self.r);
        out.rows_mut(0, self.d).copy_from(&self.inner.drift_dt(t, &x));
        let h = 1e-3 * (1.0 + t.abs());
        let dt = diff4(|u| self.rho(u, &x), t, h);
        out.rows_mut(self.d, self.r).copy_from(&dt);
        out
    }

    fn diffusion_jac(&self, i: usize, t: f64, v: &DVector<f64>) -> DMatrix<f64> {
        let x = self.x_part(v);
        let n = self.d + self.r;
        let gjac = self.inner.diffusion_jac(i, t, &x);
        let hjac = (self.obs.h_jac)(t, &x);
        let hess = (self.obs.h_hess)(t, &x);
        let g = self.inner.diffusion(i, t, &x);
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (self.d, self.d)).copy_from(&gjac);
        // ∂σʲ/∂x = gᵀ·Hⱼ + (∂h/∂x · ∂g/∂x) row j: exact from the bundle.
        let prod = &hjac * &gjac;
        for j in 0..self.r {
            let row = g.transpose() * &hess[j] + prod.row(j);
            jac.view_mut((self.d + j, 0), (1, self.d)).copy_from(&row);
        }
        jac
    }

    fn diffusion_dt(&self, i: usize, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let x = self.x_part(v);
        let mut out = DVector::zeros(self.d + self.r);
        out.rows_mut(0, self.d)
            .copy_from(&self.inner.diffusion_dt(i, t, &x));
        // ∂σ/∂t = ∂h_jac/∂t·g + h_jac·∂g/∂t; the first factor needs a time
        // difference of the Jacobian bundle.
        let h = 1e-4 * (1.0 + t.abs());
        let jdot = ((self.obs.h_jac)(t + h, &x) - (self.obs.h_jac)(t - h, &x)) / (2.0 * h);
        let sig_dt = jdot * self.inner.diffusion(i, t, &x)
            + (self.obs.h_jac)(t, &x) * self.inner.diffusion_dt(i, t, &x);
        out.rows_mut(self.d, self.r).copy_from(&sig_dt);
        out
    }
}

/// Build the augmented model v = [x; h] together with the linear observation
/// scheme C' = [0  I_r] over the augmented state. The observation noise and
/// schedule carry over unchanged from the caller.
pub fn augment_nonlinear_observation(
    m: Arc<dyn DiffusionModel>,
    h: NonlinearObservation,
    noise: NoiseCov,
    times: Vec<f64>,
) -> Result<(AugmentedModel, ObservationModel)> {
    let d = m.dim();
    let r = h.obs_dim;
    if r == 0 {
        return Err(Error::invalid("observation dimension must be positive"));
    }
    // Probe the bundle once for dimensional consistency.
    let x = DVector::zeros(d);
    let t = times.first().copied().unwrap_or(0.0);
    let jac = (h.h_jac)(t, &x);
    if jac.nrows() != r || jac.ncols() != d {
        return Err(Error::dim(format!(
            "h_jac must be {}x{}, got {}x{}",
            r,
            d,
            jac.nrows(),
            jac.ncols()
        )));
    }
    let hess = (h.h_hess)(t, &x);
    if hess.len() != r || hess.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::dim(
            "h_hess must supply one d-by-d matrix per observation component",
        ));
    }

    let mut c = DMatrix::zeros(r, d + r);
    c.view_mut((0, d), (r, r)).copy_from(&DMatrix::identity(r, r));
    let obs = ObservationModel::new(c, noise, times)?;
    Ok((AugmentedModel { inner: m, obs: h, d, r }, obs))
}
