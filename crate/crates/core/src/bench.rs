//! Statistical benchmark protocol: batched Monte Carlo error estimates with
//! Student-t confidence intervals and convergence-order fits.
//!
//! Each realization simulates one ground-truth path, samples observations
//! from it, and runs a reference filter next to the candidates. Errors are
//! taken between filters conditioned on the same data, so path discretization
//! bias cancels and the remaining gap measures the moment approximation
//! alone. Errors are arranged into L batches of K and summarized per
//! observation pair.

use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::adaptive::{run_adaptive_filter, AdaptiveConfig};
use crate::error::{Error, Result};
use crate::filter::{run_exact_lmv_filter, run_ll_filter, FilterOptions, FilterRun, GridSpec};
use crate::model::examples::{build_example, ExampleId, ExampleSpec};
use crate::model::FileConfig;
use crate::simulate::{euler_path, ll_path, observe, PathGrid, RngStream};
use crate::wll::Beta;

/// Batched confidence interval ê ± Δ at level 1 − α.
#[derive(Clone, Copy, Debug)]
pub struct ConfidenceEstimate {
    pub mean: f64,
    pub delta: f64,
    pub l_batches: usize,
    pub k_batch: usize,
    pub alpha: f64,
}

/// Per-realization error series against the reference filter, indexed by
/// observation pair k (prediction over [t_k, t_{k+1}], filtering at t_{k+1}).
#[derive(Clone, Debug)]
pub struct ErrorSample {
    pub filt_mean: Vec<f64>,
    pub filt_var: Vec<f64>,
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
}

/// The four error series measured per filter pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    FilterMean,
    FilterVariance,
    PredictionMean,
    PredictionVariance,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 4] = [
        ErrorKind::FilterMean,
        ErrorKind::FilterVariance,
        ErrorKind::PredictionMean,
        ErrorKind::PredictionVariance,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ErrorKind::FilterMean => "filter_mean",
            ErrorKind::FilterVariance => "filter_variance",
            ErrorKind::PredictionMean => "prediction_mean",
            ErrorKind::PredictionVariance => "prediction_variance",
        }
    }

    /// Row label in the t_{k+1}/t_{k+1} (filtering) or t_{k+1}/t_k
    /// (prediction) convention.
    pub fn row_label(&self, k: usize) -> String {
        match self {
            ErrorKind::FilterMean | ErrorKind::FilterVariance => {
                format!("t{}/t{}", k + 1, k + 1)
            }
            ErrorKind::PredictionMean | ErrorKind::PredictionVariance => {
                format!("t{}/t{}", k + 1, k)
            }
        }
    }

    fn pick(&self, s: &ErrorSample, k: usize) -> f64 {
        match self {
            ErrorKind::FilterMean => s.filt_mean[k],
            ErrorKind::FilterVariance => s.filt_var[k],
            ErrorKind::PredictionMean => s.pred_mean[k],
            ErrorKind::PredictionVariance => s.pred_var[k],
        }
    }
}

impl ErrorSample {
    pub fn len(&self) -> usize {
        self.filt_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filt_mean.is_empty()
    }
}

/// Euclidean/Frobenius gap between two filter runs on the same observation
/// schedule, one value per observation pair and error kind.
pub fn error_sample(reference: &FilterRun, candidate: &FilterRun) -> Result<ErrorSample> {
    if reference.steps.len() != candidate.steps.len() {
        return Err(Error::invalid(format!(
            "filter runs cover {} and {} observation pairs",
            reference.steps.len(),
            candidate.steps.len()
        )));
    }
    let n = reference.steps.len();
    let mut out = ErrorSample {
        filt_mean: Vec::with_capacity(n),
        filt_var: Vec::with_capacity(n),
        pred_mean: Vec::with_capacity(n),
        pred_var: Vec::with_capacity(n),
    };
    for (r, c) in reference.steps.iter().zip(candidate.steps.iter()) {
        if (r.t - c.t).abs() > 1e-9 * r.t.abs().max(1.0) {
            return Err(Error::invalid(format!(
                "filter runs disagree on observation times: {} vs {}",
                r.t, c.t
            )));
        }
        out.filt_mean.push((&r.filt.y - &c.filt.y).norm());
        out.filt_var.push((&r.v_filt - &c.v_filt).norm());
        out.pred_mean.push((&r.pred.y - &c.pred.y).norm());
        out.pred_var.push((&r.v_pred - &c.v_pred).norm());
    }
    Ok(out)
}

/// Inverse CDF of the Student-t distribution with `dof` degrees of freedom.
/// The library inversion is polished with Newton steps on the CDF, so the
/// absolute error stays below 1e-8 over the usable range.
pub fn student_t_quantile(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile probability {p} outside (0, 1)")));
    }
    if dof == 0 {
        return Err(Error::invalid("Student-t needs at least one degree of freedom"));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::invalid(format!("Student-t setup failed: {e}")))?;
    let mut x = dist.inverse_cdf(p);
    for _ in 0..4 {
        let density = dist.pdf(x);
        if !(density > 0.0) {
            break;
        }
        let step = (dist.cdf(x) - p) / density;
        x -= step;
        if step.abs() <= 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Batch-means confidence interval: L batches of K values in listed order,
/// half-width from the t quantile with L − 1 degrees of freedom.
pub fn batch_ci(errors: &[f64], l_batches: usize, k_batch: usize, alpha: f64) -> Result<ConfidenceEstimate> {
    if l_batches < 2 || k_batch < 1 {
        return Err(Error::invalid(format!(
            "need at least 2 batches of 1, got L = {l_batches}, K = {k_batch}"
        )));
    }
    if errors.len() != l_batches * k_batch {
        return Err(Error::invalid(format!(
            "{} errors cannot fill {l_batches} batches of {k_batch}",
            errors.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("significance {alpha} outside (0, 1)")));
    }
    let batch_means: Vec<f64> = errors
        .chunks_exact(k_batch)
        .map(|chunk| chunk.iter().sum::<f64>() / k_batch as f64)
        .collect();
    let lf = l_batches as f64;
    let mean = batch_means.iter().sum::<f64>() / lf;
    let var = batch_means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (lf - 1.0);
    let t = student_t_quantile(1.0 - alpha / 2.0, l_batches - 1)?;
    Ok(ConfidenceEstimate {
        mean,
        delta: t * (var / lf).sqrt(),
        l_batches,
        k_batch,
        alpha,
    })
}

/// Least-squares slope of log₂(err) against log₂(h).
pub fn fit_order(hs: &[f64], errs: &[f64]) -> Result<f64> {
    if hs.len() != errs.len() || hs.len() < 2 {
        return Err(Error::invalid(format!(
            "order fit needs two or more matched points, got {} and {}",
            hs.len(),
            errs.len()
        )));
    }
    if hs.iter().chain(errs.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("order fit needs strictly positive finite inputs"));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.log2()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
    let n = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("order fit needs at least two distinct stepsizes"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum();
    Ok(sxy / sxx)
}

/// Candidate filters measured against the reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterVariant {
    /// One LL step per observation interval.
    Conventional,
    /// Uniform subdivision with the given stepsize.
    Fixed(f64),
    /// Step-doubling controller at the experiment tolerances.
    Adaptive,
}

impl FilterVariant {
    pub fn label(&self) -> String {
        match self {
            FilterVariant::Conventional => "conventional".into(),
            FilterVariant::Fixed(h) => format!("h={h:e}"),
            FilterVariant::Adaptive => "adaptive".into(),
        }
    }
}

/// Knobs of one benchmark run. Defaults give the desk-scale experiment:
/// 200 realizations in 20 batches of 10, 10 unit-spaced observations,
/// ground-truth grid δ = 1e-3.
#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub n_realizations: usize,
    pub l_batches: usize,
    pub k_batch: usize,
    pub alpha: f64,
    /// Uniform stepsizes for the fixed-grid candidates.
    pub hs: Vec<f64>,
    pub beta: Beta,
    /// Ground-truth path grid spacing.
    pub delta: f64,
    pub n_obs: usize,
    pub spacing: f64,
    /// Tolerances for the adaptive candidate; None takes the per-example
    /// stock values.
    pub adaptive: Option<AdaptiveConfig>,
    pub seed: u64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            n_realizations: 200,
            l_batches: 20,
            k_batch: 10,
            alpha: 0.1,
            hs: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            beta: Beta::One,
            delta: 1e-3,
            n_obs: 10,
            spacing: 1.0,
            adaptive: None,
            seed: 1,
        }
    }
}

impl ExperimentOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations != self.l_batches * self.k_batch {
            return Err(Error::invalid(format!(
                "{} realizations do not fill {} batches of {}",
                self.n_realizations, self.l_batches, self.k_batch
            )));
        }
        if self.n_obs < 2 {
            return Err(Error::invalid("need at least two observation instants"));
        }
        if !(self.spacing > 0.0) || !(self.delta > 0.0) {
            return Err(Error::invalid("observation spacing and path delta must be positive"));
        }
        for &h in &self.hs {
            if !(h > 0.0) || h > self.spacing {
                return Err(Error::invalid(format!(
                    "fixed stepsize {h} outside (0, spacing]"
                )));
            }
        }
        Ok(())
    }
}

/// One summarized table column: a candidate filter with its per-pair
/// confidence estimates, one row per observation pair and error kind.
#[derive(Clone, Debug)]
pub struct VariantSummary {
    pub variant: FilterVariant,
    /// cells[k][kind] with kind indexed as in ErrorKind::ALL.
    pub cells: Vec<[ConfidenceEstimate; 4]>,
    /// Realizations dropped because this candidate diverged.
    pub divergences: usize,
    /// Realizations actually aggregated (a multiple of K).
    pub n_used: usize,
}

/// Full experiment output: per-candidate summaries plus the observed orders
/// fitted across the fixed-grid candidates.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub example: ExampleId,
    pub variants: Vec<VariantSummary>,
    /// orders[k][kind]: β̂ over the Fixed(h) candidates.
    pub orders: Vec<[f64; 4]>,
    /// Realizations excluded because the reference itself failed.
    pub reference_failures: usize,
}

impl ExperimentResult {
    pub fn variant(&self, v: FilterVariant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    /// Mean error across all observation pairs for one candidate and kind.
    pub fn mean_over_pairs(&self, v: FilterVariant, kind: ErrorKind) -> Option<f64> {
        let s = self.variant(v)?;
        let idx = ErrorKind::ALL.iter().position(|k| *k == kind)?;
        let total: f64 = s.cells.iter().map(|row| row[idx].mean).sum();
        Some(total / s.cells.len() as f64)
    }

    /// β̂ of the across-pairs mean error for one kind, fitted over the
    /// fixed-grid candidates.
    pub fn order_of_means(&self, kind: ErrorKind) -> Result<f64> {
        let mut hs = Vec::new();
        let mut means = Vec::new();
        for s in &self.variants {
            if let FilterVariant::Fixed(h) = s.variant {
                hs.push(h);
                means.push(
                    self.mean_over_pairs(s.variant, kind)
                        .ok_or_else(|| Error::invalid("missing fixed-grid candidate"))?,
                );
            }
        }
        fit_order(&hs, &means)
    }
}

fn is_runtime_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Divergence { .. }
            | Error::ExpmOverflow(_)
            | Error::StepBudget { .. }
            | Error::SingularInnovation(_)
    )
}

/// Errors of every candidate on one realization; None marks a divergent
/// candidate, hard errors propagate.
fn sample_to_option(r: std::result::Result<ErrorSample, Error>) -> Result<Option<ErrorSample>> {
    match r {
        Ok(s) => Ok(Some(s)),
        Err(e) if is_runtime_failure(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Run the full protocol on one registered example: simulate, observe, filter
/// with every candidate, and summarize errors against the reference.
///
/// Candidates that diverge on a realization lose that realization (counted in
/// the summary); realizations whose reference fails are dropped everywhere.
/// Aggregation order is fixed by realization index, so results do not depend
/// on scheduling.
pub fn run_example_experiment(
    example: ExampleId,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    opts.validate()?;
    let spec = build_example(example, &FileConfig::default())?;
    run_experiment(&spec, opts)
}

/// As run_example_experiment, for an already built example setup.
pub fn run_experiment(spec: &ExampleSpec, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    opts.validate()?;
    let t_end = spec.t0 + (opts.n_obs - 1) as f64 * opts.spacing;
    let grid = PathGrid::spanning(spec.t0, t_end, opts.delta)?;
    let obs = spec.observation_model(opts.n_obs, opts.spacing)?;
    let init = spec.initial_state()?;
    let fopts = FilterOptions::default();
    let adaptive_cfg = opts
        .adaptive
        .clone()
        .unwrap_or_else(|| spec.default_adaptive());
    let reference_cfg = spec.default_adaptive();
    let exact_reference = matches!(spec.id, ExampleId::Ex1 | ExampleId::Ex2);
    let n_variants = opts.hs.len() + 2;

    // per_realization[i]: None if the reference failed, else per-candidate
    // Option<ErrorSample> in variant order (conventional, fixed.., adaptive).
    let per_realization: Vec<Option<Vec<Option<ErrorSample>>>> = (0..opts.n_realizations as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<Option<ErrorSample>>>> {
            let path_stream = RngStream::for_path(opts.seed, i);
            let obs_stream = RngStream::for_observations(opts.seed, i);
            let m = spec.model.as_ref();
            let path = if spec.additive_noise {
                ll_path(m, &grid, &spec.x0, &path_stream)?
            } else {
                euler_path(m, &grid, &spec.x0, &path_stream)?
            };
            let data = observe(&path, &obs, &obs_stream)?;

            let reference = if exact_reference {
                run_exact_lmv_filter(spec, &data, &fopts)
            } else {
                run_adaptive_filter(m, &obs, &data, &reference_cfg, opts.beta, &init, &fopts)
            };
            let reference = match reference {
                Ok(r) => r,
                Err(e) if is_runtime_failure(&e) => return Ok(None),
                Err(e) => return Err(e),
            };

            let mut row: Vec<Option<ErrorSample>> = Vec::with_capacity(n_variants);
            let conventional = run_ll_filter(
                m,
                &obs,
                &data,
                &GridSpec::Conventional,
                opts.beta,
                &init,
                &fopts,
            )
            .and_then(|run| error_sample(&reference, &run));
            row.push(sample_to_option(conventional)?);
            for &h in &opts.hs {
                let fixed = run_ll_filter(
                    m,
                    &obs,
                    &data,
                    &GridSpec::Uniform(h),
                    opts.beta,
                    &init,
                    &fopts,
                )
                .and_then(|run| error_sample(&reference, &run));
                row.push(sample_to_option(fixed)?);
            }
            let adaptive = run_adaptive_filter(
                m,
                &obs,
                &data,
                &adaptive_cfg,
                opts.beta,
                &init,
                &fopts,
            )
            .and_then(|run| error_sample(&reference, &run));
            row.push(sample_to_option(adaptive)?);
            Ok(Some(row))
        })
        .collect::<Result<Vec<_>>>()?;

    let reference_failures = per_realization.iter().filter(|r| r.is_none()).count();
    let n_pairs = opts.n_obs - 1;
    let variants: Vec<FilterVariant> = std::iter::once(FilterVariant::Conventional)
        .chain(opts.hs.iter().map(|&h| FilterVariant::Fixed(h)))
        .chain(std::iter::once(FilterVariant::Adaptive))
        .collect();

    let mut summaries = Vec::with_capacity(n_variants);
    for (vi, &variant) in variants.iter().enumerate() {
        let samples: Vec<&ErrorSample> = per_realization
            .iter()
            .filter_map(|r| r.as_ref())
            .filter_map(|row| row[vi].as_ref())
            .collect();
        let divergences = opts.n_realizations - reference_failures - samples.len();
        let l_eff = (samples.len() / opts.k_batch).min(opts.l_batches);
        if l_eff < 2 {
            return Err(Error::invalid(format!(
                "candidate {} kept only {} realizations, too few for {} batches of {}",
                variant.label(),
                samples.len(),
                opts.l_batches,
                opts.k_batch
            )));
        }
        let n_used = l_eff * opts.k_batch;
        let mut cells = Vec::with_capacity(n_pairs);
        for k in 0..n_pairs {
            let mut row = [ConfidenceEstimate {
                mean: 0.0,
                delta: 0.0,
                l_batches: l_eff,
                k_batch: opts.k_batch,
                alpha: opts.alpha,
            }; 4];
            for (ei, kind) in ErrorKind::ALL.iter().enumerate() {
                let errs: Vec<f64> = samples[..n_used]
                    .iter()
                    .map(|s| kind.pick(s, k))
                    .collect();
                row[ei] = batch_ci(&errs, l_eff, opts.k_batch, opts.alpha)?;
            }
            cells.push(row);
        }
        summaries.push(VariantSummary {
            variant,
            cells,
            divergences,
            n_used,
        });
    }

    let mut orders = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let mut row = [f64::NAN; 4];
        for (ei, _) in ErrorKind::ALL.iter().enumerate() {
            let mut hs = Vec::new();
            let mut means = Vec::new();
            for s in &summaries {
                if let FilterVariant::Fixed(h) = s.variant {
                    hs.push(h);
                    means.push(s.cells[k][ei].mean);
                }
            }
            if hs.len() >= 2 && means.iter().all(|&m| m > 0.0) {
                row[ei] = fit_order(&hs, &means)?;
            }
        }
        orders.push(row);
    }

    Ok(ExperimentResult {
        example: spec.id,
        variants: summaries,
        orders,
        reference_failures,
    })
}
