//! Observation updates and the fixed-grid filter drivers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_gain;
use crate::model::examples::{ExampleId, ExampleSpec};
use crate::model::{DiffusionModel, NoiseCov, ObservationModel, ObservationSeries};
use crate::moments::{predict_fixed, uniform_nodes, MomentState};
use crate::wll::Beta;

/// Node layout between consecutive observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridSpec {
    /// Nodes are the observation times themselves (one step per interval).
    Conventional,
    /// Uniform nodes with spacing as close to h as divides each interval.
    Uniform(f64),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FilterOptions {
    /// Assimilate an observation scheduled exactly at the initial time before
    /// the first prediction. Off by default: the driver predicts first.
    pub update_at_t0: bool,
}

/// One assimilation record: the prediction arriving at t, the update there,
/// and the stepping statistics of the preceding interval.
#[derive(Clone, Debug)]
pub struct FilterStep {
    pub k: usize,
    pub t: f64,
    pub pred: MomentState,
    pub v_pred: DMatrix<f64>,
    pub filt: MomentState,
    pub v_filt: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub accepted_steps: usize,
    pub failed_steps: usize,
}

#[derive(Clone, Debug)]
pub struct FilterRun {
    pub initial: MomentState,
    pub steps: Vec<FilterStep>,
}

impl FilterRun {
    pub fn last(&self) -> Option<&FilterStep> {
        self.steps.last()
    }
}

pub(crate) fn times_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Measurement update at t_k1: K = V Cᵀ(CVCᵀ+Σ)⁻¹, y⁺ = y + K(z−Cy),
/// V⁺ = V − KCV. Returns the filtered state and the gain.
pub fn update(
    pred: &MomentState,
    z: &DVector<f64>,
    obs: &ObservationModel,
    t_k1: f64,
) -> Result<(MomentState, DMatrix<f64>)> {
    let k = obs
        .times
        .iter()
        .position(|&t| times_close(t, t_k1))
        .ok_or_else(|| Error::invalid(format!("no observation scheduled at t = {t_k1}")))?;
    if !times_close(pred.t, t_k1) {
        return Err(Error::invalid(format!(
            "prediction is at t = {}, update requested at t = {t_k1}",
            pred.t
        )));
    }
    if z.len() != obs.obs_dim() || pred.dim() != obs.state_dim() {
        return Err(Error::dim("observation/state dimensions do not conform"));
    }
    let sigma = obs.sigma_at(k)?;
    let v = pred.variance();
    let gain = solve_gain(&v, &obs.c, sigma)?;
    let y_new = &pred.y + &gain * (z - &obs.c * &pred.y);
    let v_new = &v - &gain * &obs.c * &v;
    let v_new = 0.5 * (&v_new + v_new.transpose());
    let p_new = &v_new + &y_new * y_new.transpose();
    let filt = MomentState::new(t_k1, y_new, p_new)?;
    Ok((filt, gain))
}

pub(crate) fn check_series(obs: &ObservationModel, data: &ObservationSeries) -> Result<()> {
    if data.len() != obs.times.len() {
        return Err(Error::dim(format!(
            "series has {} observations, schedule has {}",
            data.len(),
            obs.times.len()
        )));
    }
    for (a, b) in data.times.iter().zip(&obs.times) {
        if !times_close(*a, *b) {
            return Err(Error::invalid(format!(
                "series time {a} does not match scheduled time {b}"
            )));
        }
    }
    for z in &data.values {
        if z.len() != obs.obs_dim() {
            return Err(Error::dim("observation value dimension mismatch"));
        }
    }
    Ok(())
}

fn interval_nodes(t_from: f64, t_to: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    match grid {
        GridSpec::Conventional => Ok(vec![t_from, t_to]),
        GridSpec::Uniform(h) => {
            if !(*h > 0.0) {
                return Err(Error::invalid("grid spacing must be positive"));
            }
            let n = ((t_to - t_from) / h).round().max(1.0) as usize;
            uniform_nodes(t_from, t_to, n)
        }
    }
}

/// Recursive prediction/update filter on a fixed node layout, relinearizing
/// at every node.
pub fn run_ll_filter(
    m: &dyn DiffusionModel,
    obs: &ObservationModel,
    data: &ObservationSeries,
    grid: &GridSpec,
    beta: Beta,
    init: &MomentState,
    opts: &FilterOptions,
) -> Result<FilterRun> {
    if obs.state_dim() != m.dim() {
        return Err(Error::dim("observation matrix does not match model dimension"));
    }
    check_series(obs, data)?;

    let mut st = init.clone();
    let mut steps = Vec::new();
    for j in 0..data.len() {
        let t_next = data.times[j];
        if times_close(st.t, t_next) && j == 0 {
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
        let nodes = interval_nodes(st.t, t_next, grid)?;
        let (pred, v_pred) = predict_fixed(m, &st, t_next, &nodes, beta)?;
        let innovation = &data.values[j] - &obs.c * &pred.y;
        let (filt, gain) = update(&pred, &data.values[j], obs, t_next)?;
        let v_filt = filt.variance();
        steps.push(FilterStep {
            k: j,
            t: t_next,
            pred,
            v_pred,
            filt: filt.clone(),
            v_filt,
            gain,
            innovation,
            accepted_steps: nodes.len() - 1,
            failed_steps: 0,
        });
        st = filt;
    }
    Ok(FilterRun { initial: init.clone(), steps })
}

/// Closed-form moment prediction: x' = x·e^{a(t₁²−t₀²)/2},
/// q' = q·e^{(a+σ²/2)(t₁²−t₀²)}.
pub fn exact_predict_example1(
    x: f64,
    q: f64,
    t_k: f64,
    t_k1: f64,
    a: f64,
    sigma: f64,
) -> Result<(f64, f64)> {
    if t_k1 < t_k {
        return Err(Error::invalid("prediction interval must not be negative"));
    }
    let dt2 = t_k1 * t_k1 - t_k * t_k;
    let x_pred = x * (a * dt2 / 2.0).exp();
    let q_pred = q * ((a + sigma * sigma / 2.0) * dt2).exp();
    Ok((x_pred, q_pred))
}

/// Closed-form moment prediction with two additive noise channels; a = 0 is a
/// pole of the formula and is rejected.
#[allow(clippy::too_many_arguments)]
pub fn exact_predict_example2(
    x: f64,
    q: f64,
    t_k: f64,
    t_k1: f64,
    a: f64,
    p: f64,
    sigma1: f64,
    sigma2: f64,
) -> Result<(f64, f64)> {
    if t_k1 < t_k {
        return Err(Error::invalid("prediction interval must not be negative"));
    }
    if a == 0.0 {
        return Err(Error::invalid("closed form requires a != 0"));
    }
    let dt2 = t_k1 * t_k1 - t_k * t_k;
    let x_pred = x * (a * dt2 / 2.0).exp();
    let s2term = sigma2 * sigma2 / (2.0 * a);
    let q_pred = (q + s2term) * (a * dt2).exp()
        + sigma1 * sigma1 / (2.0 * p + 1.0)
            * (t_k1.powf(2.0 * p + 1.0) - t_k.powf(2.0 * p + 1.0))
            * (a * t_k1 * t_k1).exp()
        - s2term;
    Ok((x_pred, q_pred))
}

/// Reference filter: closed-form moment prediction plus the shared update.
/// Only the scalar benchmark models have closed forms.
pub fn run_exact_lmv_filter(
    spec: &ExampleSpec,
    data: &ObservationSeries,
    opts: &FilterOptions,
) -> Result<FilterRun> {
    let predict: Box<dyn Fn(f64, f64, f64, f64) -> Result<(f64, f64)>> = match spec.id {
        ExampleId::Ex1 => {
            let a = spec.params["a"].as_f64().unwrap();
            let sigma = spec.params["sigma"].as_f64().unwrap();
            Box::new(move |x, q, t0, t1| exact_predict_example1(x, q, t0, t1, a, sigma))
        }
        ExampleId::Ex2 => {
            let a = spec.params["a"].as_f64().unwrap();
            let p = spec.params["p"].as_f64().unwrap();
            let s1 = spec.params["sigma1"].as_f64().unwrap();
            let s2 = spec.params["sigma2"].as_f64().unwrap();
            Box::new(move |x, q, t0, t1| exact_predict_example2(x, q, t0, t1, a, p, s1, s2))
        }
        other => {
            return Err(Error::invalid(format!(
                "{other} has no closed-form moment prediction"
            )))
        }
    };

    let obs = ObservationModel::new(
        spec.c.clone(),
        NoiseCov::Constant(spec.sigma_obs.clone()),
        data.times.clone(),
    )?;
    check_series(&obs, data)?;
    let init = spec.initial_state()?;

    let mut st = init.clone();
    let mut steps = Vec::new();
    for j in 0..data.len() {
        let t_next = data.times[j];
        if times_close(st.t, t_next) && j == 0 {
            if opts.update_at_t0 {
                let (filt, _) = update(&st, &data.values[0], &obs, t_next)?;
                st = filt;
            }
            continue;
        }
        let (x_pred, q_pred) = predict(st.y[0], st.p[(0, 0)], st.t, t_next)?;
        let pred = MomentState::new(t_next, DVector::from_element(1, x_pred), DMatrix::from_element(1, 1, q_pred))?;
        let v_pred = pred.variance();
        let innovation = &data.values[j] - &obs.c * &pred.y;
        let (filt, gain) = update(&pred, &data.values[j], &obs, t_next)?;
        let v_filt = filt.variance();
        steps.push(FilterStep {
            k: j,
            t: t_next,
            pred,
            v_pred,
            filt: filt.clone(),
            v_filt,
            gain,
            innovation,
            accepted_steps: 1,
            failed_steps: 0,
        });
        st = filt;
    }
    Ok(FilterRun { initial: init, steps })
}
