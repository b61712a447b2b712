//! Acceptance gate: ten end-to-end criteria covering filter correctness,
//! convergence orders, error magnitudes, controller soundness, kernel
//! properties, and CLI determinism. Each criterion prints one PASS/FAIL
//! line; the process exits nonzero if any fail.

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use llfilter_core::linalg::{expm, kron, kron_sum, solve_gain, unvec, vec_mat};
use llfilter_core::{
    adaptive_predict, build_example, euler_path, linearize, moment_step, observe, predict_fixed,
    run_adaptive_filter, run_ll_filter, uniform_nodes, AdaptiveConfig, Beta, DiffusionModel,
    ErrorKind, ExampleId, ExperimentOptions, ExperimentResult, FileConfig, FilterOptions,
    FilterVariant, GridSpec, MomentState, NoiseCov, ObservationModel, PathGrid, RngStream,
    StepRecord,
};

type Outcome = Result<String, String>;

fn check(ok: bool, reason: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(reason)
    }
}

struct Ou {
    a: f64,
    sigma: f64,
}

impl DiffusionModel for Ou {
    fn dim(&self) -> usize {
        1
    }
    fn wiener_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.a * x[0])
    }
    fn diffusion(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.sigma)
    }
    fn drift_jac(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }
    fn drift_dt(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn diffusion_dt(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
}

/// Criterion 1: the order-1 filter on a linear additive-noise model equals a
/// directly coded discrete Kalman filter at every observation, on coarse,
/// fine, and adaptive grids.
fn criterion_kalman() -> Outcome {
    let started = Instant::now();
    let m = Ou { a: -1.0, sigma: 0.5 };
    let x0 = 1.0;
    let v0 = 0.5;
    let sigma_obs = 0.01;
    let n_obs = 10usize;
    let times: Vec<f64> = (0..n_obs).map(|k| k as f64).collect();
    let obs = ObservationModel::new(
        dmatrix![1.0],
        NoiseCov::Constant(dmatrix![sigma_obs]),
        times.clone(),
    )
    .map_err(|e| e.to_string())?;

    let grid = PathGrid::new(0.0, 1e-3, 9000).map_err(|e| e.to_string())?;
    let path = euler_path(&m, &grid, &dvector![x0], &RngStream::for_path(424, 0))
        .map_err(|e| e.to_string())?;
    let data = observe(&path, &obs, &RngStream::for_observations(424, 0))
        .map_err(|e| e.to_string())?;

    // Hand-rolled Kalman recursion on the exact discretization.
    let phi = (-1.0f64).exp();
    let q_step = 0.25 * (1.0 - (-2.0f64).exp()) / 2.0;
    let mut mean = x0;
    let mut var = v0;
    let mut kalman: Vec<(f64, f64, f64, f64)> = Vec::new();
    for (k, z) in data.values.iter().enumerate() {
        if k > 0 {
            mean *= phi;
            var = phi * phi * var + q_step;
        }
        let (mp, vp) = (mean, var);
        let gain = var / (var + sigma_obs);
        mean += gain * (z[0] - mean);
        var *= 1.0 - gain;
        if k > 0 {
            kalman.push((mp, vp, mean, var));
        }
    }

    let init = MomentState::new(0.0, dvector![x0], dmatrix![v0 + x0 * x0])
        .map_err(|e| e.to_string())?;
    let opts = FilterOptions { update_at_t0: true };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);

    let mut runs: Vec<(String, llfilter_core::FilterRun)> = Vec::new();
    for h in [1.0, 0.25, 1.0 / 64.0] {
        let run = run_ll_filter(&m, &obs, &data, &GridSpec::Uniform(h), Beta::One, &init, &opts)
            .map_err(|e| e.to_string())?;
        runs.push((format!("h={h}"), run));
    }
    let adaptive = run_adaptive_filter(
        &m,
        &obs,
        &data,
        &AdaptiveConfig::default(),
        Beta::One,
        &init,
        &opts,
    )
    .map_err(|e| e.to_string())?;
    runs.push(("adaptive".into(), adaptive));

    for (label, run) in &runs {
        check(
            run.steps.len() == kalman.len(),
            format!("{label}: {} steps, expected {}", run.steps.len(), kalman.len()),
        )?;
        for (s, (mp, vp, mf, vf)) in run.steps.iter().zip(kalman.iter()) {
            let worst = rel(s.pred.y[0], *mp)
                .max(rel(s.v_pred[(0, 0)], *vp))
                .max(rel(s.filt.y[0], *mf))
                .max(rel(s.v_filt[(0, 0)], *vf));
            check(
                worst <= 1e-9,
                format!("{label}: deviation {worst:.2e} from Kalman at t = {}", s.t),
            )?;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(elapsed < 1.0, format!("took {elapsed:.2}s, limit 1s"))?;
    Ok(format!(
        "4 grids x {} observations, max deviation within 1e-9, {elapsed:.2}s",
        kalman.len()
    ))
}

fn ex1_experiment(cell: &OnceCell<Result<ExperimentResult, String>>) -> Result<&ExperimentResult, String> {
    cell.get_or_init(|| {
        let opts = ExperimentOptions {
            seed: 11,
            ..ExperimentOptions::default()
        };
        llfilter_core::run_example_experiment(ExampleId::Ex1, &opts).map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(|e| e.clone())
}

/// Mean error across observation pairs `k_range` for each fixed h, then the
/// least-squares order of that aggregate.
fn order_over_pairs(
    res: &ExperimentResult,
    kind: ErrorKind,
    k_range: std::ops::Range<usize>,
) -> Result<f64, String> {
    let kind_idx = ErrorKind::ALL.iter().position(|k| *k == kind).unwrap();
    let mut hs = Vec::new();
    let mut means = Vec::new();
    for s in &res.variants {
        if let FilterVariant::Fixed(h) = s.variant {
            let total: f64 = k_range.clone().map(|k| s.cells[k][kind_idx].mean).sum();
            hs.push(h);
            means.push(total / k_range.len() as f64);
        }
    }
    llfilter_core::fit_order(&hs, &means).map_err(|e| e.to_string())
}

/// Criterion 2: Example 1 filter errors converge at first order in h for
/// both the mean and the variance.
fn criterion_ex1_orders(cell: &OnceCell<Result<ExperimentResult, String>>) -> Outcome {
    let started = Instant::now();
    let res = ex1_experiment(cell)?;
    let beta_mean = order_over_pairs(res, ErrorKind::FilterMean, 1..9)?;
    let beta_var = order_over_pairs(res, ErrorKind::FilterVariance, 1..9)?;
    for (label, beta) in [("mean", beta_mean), ("variance", beta_var)] {
        check(
            (0.8..=1.2).contains(&beta),
            format!("filter {label} order {beta:.3} outside [0.8, 1.2]"),
        )?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(elapsed < 300.0, format!("took {elapsed:.0}s, limit 300s"))?;
    Ok(format!(
        "filter orders: mean {beta_mean:.3}, variance {beta_var:.3} ({elapsed:.0}s)"
    ))
}

/// Criterion 3: Example 2 prediction-mean errors converge at second order.
fn criterion_ex2_order() -> Outcome {
    let opts = ExperimentOptions {
        seed: 11,
        ..ExperimentOptions::default()
    };
    let res = llfilter_core::run_example_experiment(ExampleId::Ex2, &opts)
        .map_err(|e| e.to_string())?;
    let beta = order_over_pairs(&res, ErrorKind::PredictionMean, 1..9)?;
    check(
        (1.7..=2.3).contains(&beta),
        format!("prediction-mean order {beta:.3} outside [1.7, 2.3]"),
    )?;
    Ok(format!("prediction-mean order {beta:.3}"))
}

/// Criterion 4: Example 1 mean filter error at the first observation with
/// h = 1/64 sits within a factor of 3 of the anchor value 1.36e-5.
fn criterion_ex1_magnitude(cell: &OnceCell<Result<ExperimentResult, String>>) -> Outcome {
    let res = ex1_experiment(cell)?;
    let target = 1.36e-5;
    let s = res
        .variant(FilterVariant::Fixed(1.0 / 64.0))
        .ok_or("missing h=1/64 candidate")?;
    let kind_idx = ErrorKind::ALL
        .iter()
        .position(|k| *k == ErrorKind::FilterMean)
        .unwrap();
    let measured = s.cells[0][kind_idx].mean;
    let lo = target / 3.0;
    let hi = target * 3.0;
    if measured < lo {
        return Err(format!(
            "t1/t1 filter mean {measured:.3e} below anchor band [{lo:.2e}, {hi:.2e}]: \
             exact second-moment propagation beats the anchor's variance recursion \
             by ~20x; see README notes on this criterion"
        ));
    }
    check(
        measured <= hi,
        format!("t1/t1 filter mean {measured:.3e} above anchor band [{lo:.2e}, {hi:.2e}]"),
    )?;
    Ok(format!("t1/t1 filter mean {measured:.3e} vs anchor {target:.2e}"))
}

/// Criterion 5: the adaptive filter's first prediction beats the
/// conventional filter's by at least two orders of magnitude on Example 1.
fn criterion_adaptive_vs_conventional(
    cell: &OnceCell<Result<ExperimentResult, String>>,
) -> Outcome {
    let res = ex1_experiment(cell)?;
    let kind_idx = ErrorKind::ALL
        .iter()
        .position(|k| *k == ErrorKind::PredictionMean)
        .unwrap();
    let adaptive = res
        .variant(FilterVariant::Adaptive)
        .ok_or("missing adaptive candidate")?
        .cells[0][kind_idx]
        .mean;
    let conventional = res
        .variant(FilterVariant::Conventional)
        .ok_or("missing conventional candidate")?
        .cells[0][kind_idx]
        .mean;
    check(
        adaptive * 100.0 < conventional,
        format!("adaptive {adaptive:.3e} not 100x below conventional {conventional:.3e}"),
    )?;
    Ok(format!(
        "t1/t0 prediction mean: adaptive {adaptive:.3e} vs conventional {conventional:.3e} ({:.0}x)",
        conventional / adaptive
    ))
}

/// Criterion 6: the fixed-grid predictor at h = 1/1024 reproduces the
/// Example 2 closed-form moments to 1e-3 relative.
fn criterion_ex2_closed_form() -> Outcome {
    let spec = build_example(ExampleId::Ex2, &FileConfig::default()).map_err(|e| e.to_string())?;
    let init = spec.initial_state().map_err(|e| e.to_string())?;
    let nodes = uniform_nodes(0.01, 1.01, 1024).map_err(|e| e.to_string())?;
    let (state, _) = predict_fixed(spec.model.as_ref(), &init, 1.01, &nodes, Beta::One)
        .map_err(|e| e.to_string())?;
    let (x_exact, q_exact) = llfilter_core::filter::exact_predict_example2(
        10.0, 100.0, 0.01, 1.01, -0.25, 2.0, 5.0, 0.1,
    )
    .map_err(|e| e.to_string())?;
    let rel_x = (state.y[0] - x_exact).abs() / x_exact.abs();
    let rel_q = (state.p[(0, 0)] - q_exact).abs() / q_exact.abs();
    check(
        rel_x <= 1e-3 && rel_q <= 1e-3,
        format!("relative gaps mean {rel_x:.2e}, second moment {rel_q:.2e} exceed 1e-3"),
    )?;
    Ok(format!("relative gaps: mean {rel_x:.2e}, second moment {rel_q:.2e}"))
}

fn acceptance_rule_holds(records: &[StepRecord], cfg: &AdaptiveConfig) -> bool {
    records.iter().all(|r| {
        let should = f64::max(r.e1, r.e2) <= 1.0 || r.h <= cfg.h_min * (1.0 + 1e-12);
        r.accepted == should
    })
}

/// Criterion 7: controller soundness on linear models of dimension 1 to 3
/// and on Examples 1 and 2: acceptance rule, exact landing, exactness on
/// frozen coefficients, and tolerance monotonicity.
fn criterion_controller_soundness() -> Outcome {
    struct Linear {
        a: DMatrix<f64>,
        g: DMatrix<f64>,
    }
    impl DiffusionModel for Linear {
        fn dim(&self) -> usize {
            self.a.nrows()
        }
        fn wiener_dim(&self) -> usize {
            self.g.ncols()
        }
        fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
            &self.a * x
        }
        fn diffusion(&self, i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            self.g.column(i).into_owned()
        }
        fn drift_jac(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            self.a.clone()
        }
        fn drift_dt(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(self.dim())
        }
        fn diffusion_jac(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(self.dim(), self.dim())
        }
        fn diffusion_dt(&self, _i: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(self.dim())
        }
    }

    let cases: Vec<(Linear, DVector<f64>)> = vec![
        (
            Linear {
                a: dmatrix![-0.5],
                g: dmatrix![0.8],
            },
            dvector![1.2],
        ),
        (
            Linear {
                a: dmatrix![-1.0, 0.3; -0.2, -0.7],
                g: dmatrix![0.5, 0.0; 0.1, 0.4],
            },
            dvector![1.0, -0.5],
        ),
        (
            Linear {
                a: dmatrix![-1.5, 0.2, 0.1; 0.0, -0.9, 0.4; -0.3, 0.0, -1.1],
                g: dmatrix![0.3, 0.0, 0.0; 0.0, 0.2, 0.1; 0.1, 0.0, 0.4],
            },
            dvector![0.5, 1.0, -1.0],
        ),
    ];
    let cfg = AdaptiveConfig {
        rtol_y: 1e-8,
        atol_y: 1e-8,
        rtol_p: 1e-8,
        atol_p: 1e-8,
        ..AdaptiveConfig::default()
    };
    for (idx, (m, x0)) in cases.iter().enumerate() {
        let d = m.dim();
        let q0 = x0 * x0.transpose() + DMatrix::identity(d, d) * 0.5;
        let state = MomentState::new(0.0, x0.clone(), q0).map_err(|e| e.to_string())?;
        let res = adaptive_predict(m, &state, 0.0, 1.0, &cfg, Beta::One, None)
            .map_err(|e| e.to_string())?;
        check(
            acceptance_rule_holds(&res.records, &cfg),
            format!("case {idx}: acceptance rule violated"),
        )?;
        check(
            res.records.iter().all(|r| r.accepted),
            format!("case {idx}: rejected trial on a frozen-coefficient model"),
        )?;
        check(res.state.t == 1.0, format!("case {idx}: landed at {}", res.state.t))?;
        let lin = linearize(m, 0.0, &state.y, Beta::One).map_err(|e| e.to_string())?;
        let exact = moment_step(&lin, &state, 1.0).map_err(|e| e.to_string())?;
        let gap_y = (&res.state.y - &exact.y).amax() / exact.y.amax().max(1e-9);
        let gap_p = (&res.state.p - &exact.p).amax() / exact.p.amax().max(1e-9);
        check(
            gap_y <= 1e-7 && gap_p <= 1e-6,
            format!("case {idx}: gaps to one-step flow {gap_y:.2e}, {gap_p:.2e}"),
        )?;
    }

    // Example 1: rule plus exact landing and interval coverage.
    let spec = build_example(ExampleId::Ex1, &FileConfig::default()).map_err(|e| e.to_string())?;
    let state = spec.initial_state().map_err(|e| e.to_string())?;
    let ex_cfg = spec.default_adaptive();
    let res = adaptive_predict(spec.model.as_ref(), &state, 0.5, 1.5, &ex_cfg, Beta::One, None)
        .map_err(|e| e.to_string())?;
    check(
        acceptance_rule_holds(&res.records, &ex_cfg),
        "example 1: acceptance rule violated".into(),
    )?;
    check(res.state.t == 1.5, format!("example 1: landed at {}", res.state.t))?;
    let covered: f64 = res.records.iter().filter(|r| r.accepted).map(|r| 2.0 * r.h).sum();
    check(
        (covered - 1.0).abs() < 1e-9,
        format!("example 1: accepted steps cover {covered}"),
    )?;

    // Example 2: tighter tolerances take more steps and land closer to the
    // closed form.
    let spec2 = build_example(ExampleId::Ex2, &FileConfig::default()).map_err(|e| e.to_string())?;
    let state2 = spec2.initial_state().map_err(|e| e.to_string())?;
    let (x_exact, q_exact) = llfilter_core::filter::exact_predict_example2(
        10.0, 100.0, 0.01, 1.01, -0.25, 2.0, 5.0, 0.1,
    )
    .map_err(|e| e.to_string())?;
    let mut last = (f64::INFINITY, 0usize);
    for rtol in [1e-4, 1e-7] {
        let cfg2 = AdaptiveConfig {
            rtol_y: rtol,
            atol_y: rtol,
            rtol_p: rtol,
            atol_p: rtol * 1e-3,
            ..AdaptiveConfig::default()
        };
        let r = adaptive_predict(spec2.model.as_ref(), &state2, 0.01, 1.01, &cfg2, Beta::One, None)
            .map_err(|e| e.to_string())?;
        check(
            acceptance_rule_holds(&r.records, &cfg2),
            format!("example 2 rtol {rtol}: acceptance rule violated"),
        )?;
        let err = (r.state.y[0] - x_exact).abs() / x_exact.abs()
            + (r.state.p[(0, 0)] - q_exact).abs() / q_exact.abs();
        let steps = r.accepted_steps();
        check(
            err < last.0 && steps > last.1,
            format!(
                "example 2 rtol {rtol}: error {err:.2e} steps {steps} vs previous {:.2e}/{}",
                last.0, last.1
            ),
        )?;
        last = (err, steps);
    }
    Ok("3 linear models + examples 1-2: rule, landing, exactness, monotonicity".into())
}

/// Criterion 8: linear-algebra kernels satisfy their defining identities.
fn criterion_linalg_kernels() -> Outcome {
    let a = dmatrix![0.7, -0.4, 0.1; 0.2, 0.5, -0.3; -0.1, 0.6, 0.2];
    let b = dmatrix![1.0, 0.3, -0.2; 0.0, -0.7, 0.4; 0.5, 0.1, 0.9];
    let x = dmatrix![0.9, -0.5, 0.2; 0.4, 1.1, -0.6; -0.3, 0.0, 0.8];

    // vec/unvec inverse pair and the Kronecker action vec(AXB) =
    // (B' (x) A) vec(X).
    let vx = vec_mat(&x).map_err(|e| e.to_string())?;
    let back = unvec(&vx, 3).map_err(|e| e.to_string())?;
    check((&back - &x).amax() == 0.0, "vec/unvec failed to round-trip".into())?;
    let lhs = vec_mat(&(&a * &x * &b)).map_err(|e| e.to_string())?;
    let rhs = kron(&b.transpose(), &a) * &vx;
    check(
        (&lhs - &rhs).amax() <= 1e-12 * lhs.amax().max(1.0),
        "Kronecker vectorization identity failed".into(),
    )?;

    // Kronecker-sum action: unvec((A (+) A) vec P) = P A' + A P.
    let p = &x * x.transpose();
    let action = kron_sum(&a, &a).map_err(|e| e.to_string())? * vec_mat(&p).unwrap();
    let direct = &p * a.transpose() + &a * &p;
    check(
        (&unvec(&action, 3).unwrap() - &direct).amax() <= 1e-12 * direct.amax().max(1.0),
        "Kronecker-sum action failed".into(),
    )?;

    // Exponential flow property on a nonsymmetric matrix.
    let e_sum = expm(&(&b * 0.7)).map_err(|e| e.to_string())?;
    let split = expm(&(&b * 0.3)).unwrap() * expm(&(&b * 0.4)).unwrap();
    check(
        (&e_sum - &split).amax() <= 1e-10 * e_sum.amax().max(1.0),
        "exponential flow property failed".into(),
    )?;

    // Nilpotent exactness: series terminates, no truncation error allowed
    // beyond roundoff.
    let n = dmatrix![0.0, 2.0, -1.0; 0.0, 0.0, 3.0; 0.0, 0.0, 0.0];
    let en = expm(&n).map_err(|e| e.to_string())?;
    let exact = DMatrix::identity(3, 3) + &n + (&n * &n) * 0.5;
    check(
        (&en - &exact).amax() <= 1e-14 * exact.amax().max(1.0),
        "nilpotent exponential not exact".into(),
    )?;

    // Diagonal exactness.
    let d = DMatrix::from_diagonal(&dvector![0.3, -1.2, 2.0]);
    let ed = expm(&d).map_err(|e| e.to_string())?;
    for (i, &lambda) in [0.3, -1.2, 2.0].iter().enumerate() {
        check(
            (ed[(i, i)] - f64::exp(lambda)).abs() <= 1e-13 * f64::exp(lambda).abs(),
            "diagonal exponential not exact".into(),
        )?;
    }

    // Gain solve residual: K (C V C' + S) = V C'.
    let v = {
        let r = dmatrix![1.0, 0.2, -0.1; 0.2, 0.8, 0.3; -0.1, 0.3, 1.5];
        &r * r.transpose()
    };
    let c = dmatrix![1.0, 0.0, 0.5; 0.0, 1.0, -0.5];
    let s = dmatrix![0.05, 0.01; 0.01, 0.08];
    let k = solve_gain(&v, &c, &s).map_err(|e| e.to_string())?;
    let residual = &k * (&c * &v * c.transpose() + &s) - &v * c.transpose();
    check(
        residual.amax() <= 1e-12 * v.amax().max(1.0),
        format!("gain residual {:.2e}", residual.amax()),
    )?;
    Ok("vec/kron, kron-sum, expm flow/nilpotent/diagonal, gain residual".into())
}

/// Criterion 9: Van der Pol filters (Examples 3 and 4) converge at first
/// order in the filtered mean against the tight adaptive reference.
fn criterion_vdp_orders() -> Outcome {
    let started = Instant::now();
    let mut notes = Vec::new();
    for id in [ExampleId::Ex3, ExampleId::Ex4] {
        let opts = ExperimentOptions {
            n_realizations: 100,
            l_batches: 10,
            k_batch: 10,
            hs: vec![1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            seed: 11,
            // The reference already runs at the stock tight tolerances; the
            // adaptive candidate runs looser to keep the gate fast.
            adaptive: Some(AdaptiveConfig {
                rtol_y: 1e-5,
                atol_y: 1e-5,
                rtol_p: 1e-5,
                atol_p: 1e-8,
                ..AdaptiveConfig::default()
            }),
            ..ExperimentOptions::default()
        };
        let res = llfilter_core::run_example_experiment(id, &opts).map_err(|e| e.to_string())?;
        let beta = order_over_pairs(&res, ErrorKind::FilterMean, 0..9)?;
        check(
            (0.75..=1.25).contains(&beta),
            format!("{id:?}: filtered-mean order {beta:.3} outside [0.75, 1.25]"),
        )?;
        notes.push(format!("{id:?} {beta:.3}"));
    }
    let elapsed = started.elapsed().as_secs_f64();
    check(elapsed < 600.0, format!("took {elapsed:.0}s, limit 600s"))?;
    Ok(format!("filtered-mean orders: {} ({elapsed:.0}s)", notes.join(", ")))
}

/// Criterion 10: every CLI command writes byte-identical CSVs when rerun
/// with the same seed.
fn criterion_cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_llfilter");
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--example", "ex1", "--seed", "5", "--delta", "0.01"],
        vec!["filter", "--example", "ex2", "--grid", "adaptive", "--seed", "5", "--delta", "0.01"],
        vec![
            "filter", "--example", "ex4", "--grid", "1/32", "--seed", "5", "--delta", "0.01",
        ],
        vec![
            "bench", "--example", "ex1", "--n", "8", "--k-batch", "2", "--hs", "1/8,1/16",
            "--delta", "0.025", "--seed", "5",
        ],
        vec![
            "convergence", "--example", "ex1", "--target", "prediction-mean", "--n", "8",
            "--k-batch", "2", "--hs", "1/8,1/16", "--delta", "0.025", "--seed", "5",
        ],
    ];
    let mut compared = 0usize;
    for args in &commands {
        let mut outputs: Vec<std::collections::BTreeMap<String, Vec<u8>>> = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let status = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(dir.path())
                .env_remove("LLFILTER_SEED")
                .output()
                .map_err(|e| e.to_string())?;
            check(
                status.status.success(),
                format!(
                    "`{}` failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&status.stderr)
                ),
            )?;
            let mut files = std::collections::BTreeMap::new();
            for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
                let entry = entry.map_err(|e| e.to_string())?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.ends_with(".csv") {
                    files.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
                }
            }
            check(
                !files.is_empty(),
                format!("`{}` wrote no CSV files", args.join(" ")),
            )?;
            outputs.push(files);
        }
        let (first, second) = (&outputs[0], &outputs[1]);
        check(
            first.keys().eq(second.keys()),
            format!("`{}` wrote different file sets", args.join(" ")),
        )?;
        for (name, bytes) in first {
            check(
                bytes == &second[name],
                format!("`{}`: {} differs between runs", args.join(" "), name),
            )?;
            compared += 1;
        }
    }
    Ok(format!(
        "{} commands, {compared} CSV files byte-identical across reruns",
        commands.len()
    ))
}

fn main() {
    let ex1_cell: OnceCell<Result<ExperimentResult, String>> = OnceCell::new();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("Kalman equivalence on a linear model", Box::new(criterion_kalman)),
        (
            "Example 1 filter convergence order",
            Box::new(|| criterion_ex1_orders(&ex1_cell)),
        ),
        (
            "Example 2 prediction-mean convergence order",
            Box::new(criterion_ex2_order),
        ),
        (
            "Example 1 error magnitude at h=1/64",
            Box::new(|| criterion_ex1_magnitude(&ex1_cell)),
        ),
        (
            "Example 1 adaptive vs conventional accuracy",
            Box::new(|| criterion_adaptive_vs_conventional(&ex1_cell)),
        ),
        (
            "Example 2 closed-form prediction consistency",
            Box::new(criterion_ex2_closed_form),
        ),
        (
            "Adaptive controller soundness",
            Box::new(criterion_controller_soundness),
        ),
        (
            "Linear-algebra kernel properties",
            Box::new(criterion_linalg_kernels),
        ),
        (
            "Van der Pol filter convergence orders",
            Box::new(criterion_vdp_orders),
        ),
        ("CLI determinism", Box::new(criterion_cli_determinism)),
    ];

    let mut failures = 0usize;
    for (i, (label, body)) in criteria.iter().enumerate() {
        let outcome = match catch_unwind(AssertUnwindSafe(body)) {
            Ok(result) => result,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panicked".into());
                Err(format!("panicked: {msg}"))
            }
        };
        match outcome {
            Ok(note) => println!("ACCEPTANCE {} {label}: PASS ({note})", i + 1),
            Err(reason) => {
                failures += 1;
                println!("ACCEPTANCE {} {label}: FAIL ({reason})", i + 1);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
