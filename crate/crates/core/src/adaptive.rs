//! Variable-stepsize moment prediction by local step doubling.
//!
//! Each trial compares two chained steps of size h (relinearizing at the
//! midpoint) against a single step of size 2h from the same base. The scaled
//! discrepancy between the two estimates drives acceptance and the next
//! proposal. Only two matrix exponentials are paid per trial: the coarse
//! estimate reuses the half-step flow as Φ².

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{check_series, times_close, update, FilterOptions, FilterRun, FilterStep};
use crate::linalg::{expm, vec_mat};
use crate::model::{DiffusionModel, ObservationModel, ObservationSeries};
use crate::moments::{build_augmented, divergence, moment_blocks, moment_step, MomentBlocks, MomentState};
use crate::wll::{linearize, Beta, LinearizationData};

/// Tolerances and guards of the step controller. Mean and second-moment
/// fields carry separate tolerance pairs.
#[derive(Clone, Copy, Debug)]
pub struct AdaptiveConfig {
    pub rtol_y: f64,
    pub atol_y: f64,
    pub rtol_p: f64,
    pub atol_p: f64,
    /// Floor under every proposed stepsize; steps at or below it are
    /// accepted unconditionally so the run cannot stall.
    pub h_min: f64,
    /// Cap on the half-step h. None caps at half the current interval.
    pub h_max: Option<f64>,
    /// Floating-point precision constant used by the degenerate-branch
    /// guards and the landing test.
    pub prs: f64,
    /// Maximum trial steps per prediction interval before giving up.
    pub step_budget: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            rtol_y: 1e-6,
            atol_y: 1e-6,
            rtol_p: 1e-6,
            atol_p: 1e-9,
            h_min: 1e-8,
            h_max: None,
            prs: 2.2e-16,
            step_budget: 1_000_000,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("atol_y", self.atol_y),
            ("atol_P", self.atol_p),
            ("h_min", self.h_min),
            ("prs", self.prs),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("rtol_y", self.rtol_y), ("rtol_P", self.rtol_p)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        if let Some(hm) = self.h_max {
            if !(hm >= self.h_min) || !hm.is_finite() {
                return Err(Error::config(format!(
                    "h_max must be finite and at least h_min = {}, got {hm}",
                    self.h_min
                )));
            }
        }
        if self.step_budget == 0 {
            return Err(Error::config("step budget must be positive"));
        }
        Ok(())
    }
}

/// One trial of the controller: a double step of size h attempted at tau.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub tau: f64,
    pub h: f64,
    pub e1: f64,
    pub e2: f64,
    pub accepted: bool,
}

/// Result of one adaptive prediction interval.
#[derive(Clone, Debug)]
pub struct AdaptivePrediction {
    pub state: MomentState,
    pub variance: DMatrix<f64>,
    pub records: Vec<StepRecord>,
    /// Last proposal, seeding the next interval.
    pub h_carry: f64,
}

impl AdaptivePrediction {
    pub fn accepted_steps(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn failed_steps(&self) -> usize {
        self.records.len() - self.accepted_steps()
    }
}

/// RMS of v entrywise scaled by sc = atol + rtol·|v₀|.
fn sc_norm(v: &DVector<f64>, v0: &DVector<f64>, atol: f64, rtol: f64) -> f64 {
    let n = v.len().max(1) as f64;
    let s: f64 = v
        .iter()
        .zip(v0.iter())
        .map(|(vi, v0i)| {
            let sc = atol + rtol * v0i.abs();
            (vi / sc) * (vi / sc)
        })
        .sum();
    (s / n).sqrt()
}

/// Mean-field right side at absolute time t: A·y + a₀ + a₁(t−s).
fn f_mean(lin: &LinearizationData, t: f64, y: &DVector<f64>) -> DVector<f64> {
    &lin.a_mat * y + lin.a_beta(t)
}

/// Second-moment right side in vectorized form at offset th from the base:
/// 𝒜·vecP + vec(β₁ + θβ₂ + θ²β₃) + (β₄ + θβ₅)·y.
fn f_vecp(
    blocks: &MomentBlocks,
    th: f64,
    vecp: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let quad = &blocks.beta1 + th * (&blocks.beta2 + th * &blocks.beta3);
    let lin_in_y = &blocks.beta4 + th * &blocks.beta5;
    Ok(&blocks.cal_a * vecp + vec_mat(&quad)? + lin_in_y * y)
}

/// Starting stepsize from the scaled magnitudes of the two moment fields and
/// their first derivatives, with a finite-difference probe of the curvature.
pub fn initial_stepsize(
    m: &dyn DiffusionModel,
    state: &MomentState,
    cfg: &AdaptiveConfig,
    t0: f64,
    t1: f64,
    beta: Beta,
) -> Result<f64> {
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::invalid(format!(
            "initial stepsize needs t1 > t0, got [{t0}, {t1}]"
        )));
    }
    if !times_close(state.t, t0) {
        return Err(Error::invalid(format!(
            "state time {} does not match interval start {t0}",
            state.t
        )));
    }
    let lin = linearize(m, t0, &state.y, beta)?;
    let blocks = moment_blocks(&lin)?;
    let order = beta.order();

    let y0 = &state.y;
    let vp0 = vec_mat(&state.p)?;
    let f0_y = f_mean(&lin, t0, y0);
    let f0_p = f_vecp(&blocks, 0.0, &vp0, y0)?;

    let mut deltas = [0.0f64; 2];
    for (which, (v0, f0, atol, rtol)) in [
        (y0, &f0_y, cfg.atol_y, cfg.rtol_y),
        (&vp0, &f0_p, cfg.atol_p, cfg.rtol_p),
    ]
    .into_iter()
    .enumerate()
    {
        if f0.iter().any(|x| !x.is_finite()) {
            return Err(Error::model(
                "non-finite moment derivative while sizing the first step",
            ));
        }
        let d0 = sc_norm(v0, v0, atol, rtol);
        let d1 = sc_norm(f0, v0, atol, rtol);
        let delta1 = if d0 < 10.0 * atol || d1 < 10.0 * atol {
            atol
        } else {
            0.01 * d0 / d1
        };
        // Curvature probe along the solution direction, both fields advanced
        // consistently.
        let dfd = cfg.prs.sqrt() * (1.0 + d0);
        let f1 = if which == 0 {
            f_mean(&lin, t0 + dfd, &(v0 + dfd * f0))
        } else {
            let y_probe = y0 + dfd * &f0_y;
            f_vecp(&blocks, dfd, &(v0 + dfd * f0), &y_probe)?
        };
        if f1.iter().any(|x| !x.is_finite()) {
            return Err(Error::model(
                "non-finite moment derivative while sizing the first step",
            ));
        }
        let d2 = sc_norm(&((&f1 - f0) / dfd), v0, atol, rtol);
        let delta2 = if d1.max(d2) <= cfg.prs {
            atol.max(delta1 * rtol)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / (order + 1.0))
        };
        deltas[which] = (100.0 * delta1).min(delta2);
    }
    Ok(cfg.h_min.max(deltas[0].min(deltas[1]).min(t1 - t0)))
}

/// Two chained steps of size h against one step of size 2h, all from the
/// supplied linearization base. The midpoint is relinearized for the fine
/// estimate; the coarse estimate reuses the half-step flow squared.
pub fn double_step(
    m: &dyn DiffusionModel,
    lin: &LinearizationData,
    state: &MomentState,
    h: f64,
) -> Result<(MomentState, MomentState)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let sys = build_augmented(lin, state)?;
    let phi = expm(&(&sys.m_mat * h))?;
    let w1 = &phi * &sys.u_vec;
    let (y1, p1) = sys.extract(&state.y, &w1)?;
    let t_mid = state.t + h;
    let mid = MomentState::new(t_mid, y1, p1).map_err(|e| divergence(0, t_mid, e))?;

    let lin_mid = linearize(m, t_mid, &mid.y, lin.beta)?;
    let fine = moment_step(&lin_mid, &mid, h)?;

    let wc = &phi * &w1;
    let (yc, pc) = sys.extract(&state.y, &wc)?;
    let t_end = state.t + 2.0 * h;
    let coarse = MomentState::new(t_end, yc, pc).map_err(|e| divergence(0, t_end, e))?;
    Ok((fine, coarse))
}

fn doubling_norm(
    new: &DVector<f64>,
    alt: &DVector<f64>,
    prev: &DVector<f64>,
    atol: f64,
    rtol: f64,
) -> f64 {
    let n = new.len().max(1) as f64;
    let s: f64 = new
        .iter()
        .zip(alt.iter())
        .zip(prev.iter())
        .map(|((nf, nc), pv)| {
            let sc = atol + rtol * pv.abs().max(nf.abs());
            ((nf - nc) / sc) * ((nf - nc) / sc)
        })
        .sum();
    (s / n).sqrt()
}

/// Scaled RMS discrepancies between the fine and coarse estimates, for the
/// mean (E1) and the vectorized second moment (E2).
pub fn step_errors(
    fine: &MomentState,
    coarse: &MomentState,
    prev: &MomentState,
    cfg: &AdaptiveConfig,
) -> Result<(f64, f64)> {
    let d = prev.dim();
    if fine.dim() != d || coarse.dim() != d {
        return Err(Error::dim("moment states disagree in dimension"));
    }
    let e1 = doubling_norm(&fine.y, &coarse.y, &prev.y, cfg.atol_y, cfg.rtol_y);
    let e2 = doubling_norm(
        &vec_mat(&fine.p)?,
        &vec_mat(&coarse.p)?,
        &vec_mat(&prev.p)?,
        cfg.atol_p,
        cfg.rtol_p,
    );
    Ok((e1, e2))
}

fn proposal(e: f64, h: f64, order: f64) -> f64 {
    if e <= 0.0 {
        return 5.0 * h;
    }
    let fac = (1.0 / e).powf(1.0 / (order + 1.0));
    if e <= 1.0 {
        h * 5.0f64.min(0.25f64.max(0.8 * fac))
    } else {
        h * 1.0f64.min(0.1f64.max(0.2 * fac))
    }
}

/// Next stepsize from the two error norms: growth capped at 5x on accepted
/// steps, shrink capped at 10x on rejected ones, floored at h_min.
pub fn propose_stepsize(e1: f64, e2: f64, h: f64, cfg: &AdaptiveConfig, beta: Beta) -> f64 {
    let order = beta.order();
    cfg.h_min.max(proposal(e1, h, order).min(proposal(e2, h, order)))
}

/// Advance the moments from t_k to t_k1 by accepted double steps. A step is
/// accepted when max(E1, E2) <= 1 or the stepsize is already at the floor;
/// otherwise it is discarded and retried from the same base with the new
/// proposal. The final step is trimmed to land exactly on t_k1. A carried
/// stepsize seeds the interval; otherwise one is derived from the fields.
pub fn adaptive_predict(
    m: &dyn DiffusionModel,
    state: &MomentState,
    t_k: f64,
    t_k1: f64,
    cfg: &AdaptiveConfig,
    beta: Beta,
    h_carry: Option<f64>,
) -> Result<AdaptivePrediction> {
    cfg.validate()?;
    if !(t_k1 > t_k) {
        return Err(Error::invalid(format!(
            "prediction interval must advance, got [{t_k}, {t_k1}]"
        )));
    }
    if !times_close(state.t, t_k) {
        return Err(Error::invalid(format!(
            "state time {} does not match interval start {t_k}",
            state.t
        )));
    }

    let hmax_i = match cfg.h_max {
        Some(hm) => hm,
        None => (t_k1 - t_k) / 2.0,
    };
    let mut h = match h_carry {
        Some(h0) => {
            if !(h0 > 0.0) || !h0.is_finite() {
                return Err(Error::invalid(format!(
                    "carried stepsize must be positive, got {h0}"
                )));
            }
            h0
        }
        None => initial_stepsize(m, state, cfg, t_k, t_k1, beta)?,
    };

    let mut st = state.clone();
    let mut t = t_k;
    let mut records = Vec::new();
    let end_slack = 1e-14 * t_k1.abs().max(1.0);
    let land_tol = 4.0 * cfg.prs * t_k1.abs().max(1.0);

    while t < t_k1 - end_slack {
        if records.len() >= cfg.step_budget {
            return Err(Error::StepBudget {
                budget: cfg.step_budget,
                t_from: t_k,
                t_to: t_k1,
            });
        }
        h = h.min(hmax_i).min((t_k1 - t) / 2.0);
        let lin = linearize(m, t, &st.y, beta)?;
        // A trial that blows up above the floor counts as a rejection with
        // infinite error; at the floor the failure is genuine divergence.
        let outcome = match double_step(m, &lin, &st, h) {
            Ok((fine, coarse)) => {
                let (e1, e2) = step_errors(&fine, &coarse, &st, cfg)?;
                Some((fine, e1, e2))
            }
            Err(e @ (Error::Divergence { .. } | Error::ExpmOverflow(_))) => {
                if h <= cfg.h_min {
                    return Err(e);
                }
                None
            }
            Err(e) => return Err(e),
        };
        let (e1, e2, fine) = match outcome {
            Some((fine, e1, e2)) => (e1, e2, Some(fine)),
            None => (f64::INFINITY, f64::INFINITY, None),
        };
        let accepted = fine.is_some() && (e1.max(e2) <= 1.0 || h <= cfg.h_min);
        records.push(StepRecord { tau: t, h, e1, e2, accepted });
        if accepted {
            let fine = fine.expect("accepted step has a fine estimate");
            let mut t_next = t + 2.0 * h;
            if (t_next - t_k1).abs() <= land_tol {
                t_next = t_k1;
            }
            st = MomentState { t: t_next, ..fine };
            t = t_next;
        }
        h = propose_stepsize(e1, e2, h, cfg, beta);
    }

    // Residual below end_slack is trimmed onto the boundary.
    st.t = t_k1;
    let variance = st.variance();
    Ok(AdaptivePrediction { state: st, variance, records, h_carry: h })
}

/// Recursive prediction/update filter with adaptive prediction intervals.
/// The last proposal of each interval seeds the next one.
pub fn run_adaptive_filter(
    m: &dyn DiffusionModel,
    obs: &ObservationModel,
    data: &ObservationSeries,
    cfg: &AdaptiveConfig,
    beta: Beta,
    init: &MomentState,
    opts: &FilterOptions,
) -> Result<FilterRun> {
    if obs.state_dim() != m.dim() {
        return Err(Error::dim("observation matrix does not match model dimension"));
    }
    check_series(obs, data)?;
    cfg.validate()?;

    let mut st = init.clone();
    let mut h_carry: Option<f64> = None;
    let mut steps = Vec::new();
    for j in 0..data.len() {
        let t_next = data.times[j];
        if j == 0 && times_close(st.t, t_next) {
            if opts.update_at_t0 {
                let (filt, _) = update(&st, &data.values[0], obs, t_next)?;
                st = filt;
            }
            continue;
        }
        if t_next <= st.t {
            return Err(Error::invalid(format!(
                "observation at t = {t_next} precedes the filter state at t = {}",
                st.t
            )));
        }
        let pred = adaptive_predict(m, &st, st.t, t_next, cfg, beta, h_carry)?;
        h_carry = Some(pred.h_carry);
        let innovation = &data.values[j] - &obs.c * &pred.state.y;
        let (filt, gain) = update(&pred.state, &data.values[j], obs, t_next)?;
        steps.push(FilterStep {
            k: j,
            t: t_next,
            pred: pred.state.clone(),
            v_pred: pred.variance.clone(),
            filt: filt.clone(),
            v_filt: filt.variance(),
            gain,
            innovation,
            accepted_steps: pred.accepted_steps(),
            failed_steps: pred.failed_steps(),
        });
        st = filt;
    }
    Ok(FilterRun { initial: init.clone(), steps })
}
