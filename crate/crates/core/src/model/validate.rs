//! Finite-difference cross-checks of a model's analytic derivative bundle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::DiffusionModel;

/// Deviation above this is flagged as a model-authoring error.
pub const FLAG_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct DerivativeCheck {
    pub name: String,
    pub max_rel_dev: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<DerivativeCheck>,
}

impl ValidationReport {
    pub fn max_deviation(&self) -> f64 {
        self.checks.iter().fold(0.0, |a, c| a.max(c.max_rel_dev))
    }

    pub fn pass(&self) -> bool {
        self.max_deviation() <= FLAG_THRESHOLD
    }

    /// Names of the derivative checks whose deviation exceeds the flag
    /// threshold.
    pub fn flagged(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.max_rel_dev > FLAG_THRESHOLD)
            .map(|c| c.name.as_str())
            .collect()
    }
}

fn fd_step(scale: f64) -> f64 {
    // cbrt(eps)-sized step balances truncation against cancellation for
    // second-order central differences.
    6e-6 * (1.0 + scale.abs())
}

fn central_x(
    f: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    x: &DVector<f64>,
    j: usize,
) -> DVector<f64> {
    let h = fd_step(x[j]);
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[j] += h;
    xm[j] -= h;
    (f(t, &xp) - f(t, &xm)) / (2.0 * h)
}

fn central_t(
    f: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    x: &DVector<f64>,
) -> DVector<f64> {
    let h = fd_step(t);
    (f(t + h, x) - f(t - h, x)) / (2.0 * h)
}

fn rel_dev(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).amax() / (1.0 + analytic.amax())
}

fn jac_fd(
    f: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    t: f64,
    x: &DVector<f64>,
    rows: usize,
) -> DMatrix<f64> {
    let d = x.len();
    let mut jac = DMatrix::zeros(rows, d);
    for j in 0..d {
        jac.set_column(j, &central_x(f, t, x, j));
    }
    jac
}

/// Cross-check every analytic derivative of `m` against central finite
/// differences at the given probe points. Dimension inconsistencies are hard
/// errors; derivative deviations are reported (and flag the model when above
/// `FLAG_THRESHOLD`).
pub fn validate_model(
    m: &dyn DiffusionModel,
    probes: &[(f64, DVector<f64>)],
) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::invalid("validate_model needs at least one probe"));
    }
    let d = m.dim();
    let mw = m.wiener_dim();
    let mut report = ValidationReport::default();
    let mut push = |name: &str, dev: f64| {
        report.checks.push(DerivativeCheck {
            name: name.to_string(),
            max_rel_dev: dev,
        });
    };

    let mut dev_fjac = 0.0f64;
    let mut dev_fdt = 0.0f64;
    let mut dev_gjac = vec![0.0f64; mw];
    let mut dev_gdt = vec![0.0f64; mw];
    let mut dev_fhess = 0.0f64;
    let mut saw_fhess = false;
    let mut dev_ghess = 0.0f64;
    let mut saw_ghess = false;

    for (t, x) in probes {
        if x.len() != d {
            return Err(Error::dim(format!(
                "probe state has length {}, model dimension is {}",
                x.len(),
                d
            )));
        }
        let f = m.drift(*t, x);
        if f.len() != d {
            return Err(Error::dim("drift output dimension mismatch"));
        }
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::model(format!("drift non-finite at t = {t}")));
        }

        let fx = |tt: f64, xx: &DVector<f64>| m.drift(tt, xx);
        dev_fjac = dev_fjac.max(rel_dev(&m.drift_jac(*t, x), &jac_fd(&fx, *t, x, d)));
        let dt_fd = central_t(&fx, *t, x);
        dev_fdt = dev_fdt.max(
            (m.drift_dt(*t, x) - &dt_fd).amax() / (1.0 + dt_fd.amax()),
        );

        for i in 0..mw {
            let g = m.diffusion(i, *t, x);
            if g.len() != d {
                return Err(Error::dim(format!("diffusion column {i} dimension mismatch")));
            }
            let gx = |tt: f64, xx: &DVector<f64>| m.diffusion(i, tt, xx);
            dev_gjac[i] =
                dev_gjac[i].max(rel_dev(&m.diffusion_jac(i, *t, x), &jac_fd(&gx, *t, x, d)));
            let gdt_fd = central_t(&gx, *t, x);
            dev_gdt[i] = dev_gdt[i]
                .max((m.diffusion_dt(i, *t, x) - &gdt_fd).amax() / (1.0 + gdt_fd.amax()));
        }

        if let Some(hess) = m.drift_hess(*t, x) {
            saw_fhess = true;
            if hess.len() != d {
                return Err(Error::dim("drift Hessian must have one matrix per component"));
            }
            // FD of the analytic Jacobian row k w.r.t. x gives Hessian row k.
            for (k, hk) in hess.iter().enumerate() {
                let jk = |tt: f64, xx: &DVector<f64>| m.drift_jac(tt, xx).row(k).transpose();
                let fd = jac_fd(&jk, *t, x, d);
                dev_fhess = dev_fhess.max(rel_dev(hk, &fd));
            }
        }
        for i in 0..mw {
            if let Some(hess) = m.diffusion_hess(i, *t, x) {
                saw_ghess = true;
                for (k, hk) in hess.iter().enumerate() {
                    let jk =
                        |tt: f64, xx: &DVector<f64>| m.diffusion_jac(i, tt, xx).row(k).transpose();
                    let fd = jac_fd(&jk, *t, x, d);
                    dev_ghess = dev_ghess.max(rel_dev(hk, &fd));
                }
            }
        }
    }

    push("drift_jac", dev_fjac);
    push("drift_dt", dev_fdt);
    for i in 0..mw {
        push(&format!("diffusion_jac[{i}]"), dev_gjac[i]);
        push(&format!("diffusion_dt[{i}]"), dev_gdt[i]);
    }
    if saw_fhess {
        push("drift_hess", dev_fhess);
    }
    if saw_ghess {
        push("diffusion_hess", dev_ghess);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    struct Linear {
        a: f64,
    }

    impl DiffusionModel for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn wiener_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
            dvector![self.a * x[0]]
        }
        fn diffusion(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            dvector![0.3]
        }
        fn drift_jac(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, self.a)
        }
        fn drift_dt(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            dvector![0.0]
        }
        fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn diffusion_dt(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            dvector![0.0]
        }
    }

    struct WrongJac {
        inner: Linear,
    }

    impl DiffusionModel for WrongJac {
        fn dim(&self) -> usize {
            1
        }
        fn wiener_dim(&self) -> usize {
            1
        }
        fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.drift(t, x)
        }
        fn diffusion(&self, i: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.diffusion(i, t, x)
        }
        fn drift_jac(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, self.inner.a + 1.0)
        }
        fn drift_dt(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.drift_dt(t, x)
        }
        fn diffusion_jac(&self, i: usize, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
            self.inner.diffusion_jac(i, t, x)
        }
        fn diffusion_dt(&self, i: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.diffusion_dt(i, t, x)
        }
    }

    #[test]
    fn exact_linear_jacobian_passes() {
        let m = Linear { a: -0.7 };
        let probes = vec![(0.5, dvector![1.0]), (2.0, dvector![-0.4])];
        let report = validate_model(&m, &probes).unwrap();
        assert!(report.max_deviation() <= 1e-10, "{report:?}");
        assert!(report.pass());
    }

    #[test]
    fn wrong_jacobian_flagged() {
        let m = WrongJac {
            inner: Linear { a: -0.7 },
        };
        let report = validate_model(&m, &[(0.5, dvector![1.0])]).unwrap();
        assert!(!report.pass());
        assert_eq!(report.flagged(), vec!["drift_jac"]);
    }

    #[test]
    fn empty_probes_rejected() {
        let m = Linear { a: 0.1 };
        assert!(validate_model(&m, &[]).is_err());
    }
}
