//! CSV and JSON emitters for runs, paths, and benchmark tables.
//!
//! Every numeric cell is printed with the `{:e}` exponent format, which is a
//! pure function of the bits, so identical runs serialize byte for byte.
//! Run metadata that varies between identical runs (wall time) goes only
//! into the JSON summaries, never into CSV.

use std::io::Write;
use std::time::Duration;

use serde_json::json;

use crate::adaptive::{AdaptiveConfig, StepRecord};
use crate::bench::{ErrorKind, ExperimentOptions, ExperimentResult, FilterVariant};
use crate::error::Result;
use crate::filter::FilterRun;
use crate::model::ObservationSeries;
use crate::simulate::Path;
use crate::wll::Beta;

fn cell(v: f64) -> String {
    format!("{v:e}")
}

/// One row per observation pair: moments, gain, and step counts, matrices
/// flattened row-major.
pub fn write_filter_run_csv<W: Write>(w: &mut W, run: &FilterRun) -> Result<()> {
    let d = run.initial.dim();
    let r = run.steps.first().map_or(0, |s| s.gain.ncols());
    let mut header = vec!["k".to_string(), "t".to_string()];
    for i in 0..d {
        header.push(format!("y_pred[{i}]"));
    }
    for i in 0..d {
        for j in 0..d {
            header.push(format!("V_pred[{i},{j}]"));
        }
    }
    for i in 0..d {
        header.push(format!("y_filt[{i}]"));
    }
    for i in 0..d {
        for j in 0..d {
            header.push(format!("V_filt[{i},{j}]"));
        }
    }
    for i in 0..d {
        for j in 0..r {
            header.push(format!("K[{i},{j}]"));
        }
    }
    header.push("accepted_steps".to_string());
    header.push("failed_steps".to_string());
    writeln!(w, "{}", header.join(","))?;

    for s in &run.steps {
        let mut row = vec![s.k.to_string(), cell(s.t)];
        row.extend(s.pred.y.iter().map(|&v| cell(v)));
        for i in 0..d {
            for j in 0..d {
                row.push(cell(s.v_pred[(i, j)]));
            }
        }
        row.extend(s.filt.y.iter().map(|&v| cell(v)));
        for i in 0..d {
            for j in 0..d {
                row.push(cell(s.v_filt[(i, j)]));
            }
        }
        for i in 0..d {
            for j in 0..r {
                row.push(cell(s.gain[(i, j)]));
            }
        }
        row.push(s.accepted_steps.to_string());
        row.push(s.failed_steps.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Step-controller trace: one row per trial step.
pub fn write_step_records_csv<W: Write>(w: &mut W, records: &[StepRecord]) -> Result<()> {
    writeln!(w, "tau,h,e1,e2,accepted")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            cell(r.tau),
            cell(r.h),
            cell(r.e1),
            cell(r.e2),
            r.accepted
        )?;
    }
    Ok(())
}

/// Trajectory dump: t, x[0], x[1], ...
pub fn write_path_csv<W: Write>(w: &mut W, path: &Path) -> Result<()> {
    let d = path.states.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    for i in 0..d {
        header.push(format!("x[{i}]"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, x) in path.times.iter().zip(path.states.iter()) {
        let mut row = vec![cell(*t)];
        row.extend(x.iter().map(|&v| cell(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Observation dump: t_k, z[0], z[1], ...
pub fn write_observations_csv<W: Write>(w: &mut W, series: &ObservationSeries) -> Result<()> {
    let r = series.values.first().map_or(0, |z| z.len());
    let mut header = vec!["t_k".to_string()];
    for i in 0..r {
        header.push(format!("z[{i}]"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, z) in series.times.iter().zip(series.values.iter()) {
        let mut row = vec![cell(*t)];
        row.extend(z.iter().map(|&v| cell(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// One benchmark table in long format: a row per (observation pair,
/// candidate). The fitted order is a property of the fixed-h column set, so
/// it appears on fixed-h rows and is empty elsewhere.
pub fn write_experiment_csv<W: Write>(
    w: &mut W,
    result: &ExperimentResult,
    kind: ErrorKind,
) -> Result<()> {
    let kind_idx = ErrorKind::ALL.iter().position(|k| *k == kind).unwrap();
    writeln!(w, "row_label,filter_variant,mean,delta,beta_hat")?;
    let n_pairs = result.orders.len();
    for k in 0..n_pairs {
        for s in &result.variants {
            let beta = match s.variant {
                FilterVariant::Fixed(_) => {
                    let b = result.orders[k][kind_idx];
                    if b.is_finite() {
                        cell(b)
                    } else {
                        String::new()
                    }
                }
                _ => String::new(),
            };
            let ci = &s.cells[k][kind_idx];
            writeln!(
                w,
                "{},{},{},{},{}",
                kind.row_label(k),
                s.variant.label(),
                cell(ci.mean),
                cell(ci.delta),
                beta
            )?;
        }
    }
    Ok(())
}

fn beta_tag(beta: Beta) -> u8 {
    match beta {
        Beta::One => 1,
        Beta::Two => 2,
    }
}

fn adaptive_json(cfg: &AdaptiveConfig) -> serde_json::Value {
    json!({
        "rtol_y": cfg.rtol_y,
        "atol_y": cfg.atol_y,
        "rtol_P": cfg.rtol_p,
        "atol_P": cfg.atol_p,
        "h_min": cfg.h_min,
        "h_max": cfg.h_max,
        "prs": cfg.prs,
        "step_budget": cfg.step_budget,
    })
}

/// Metadata sidecar for one benchmark run.
pub fn experiment_summary_json(
    result: &ExperimentResult,
    opts: &ExperimentOptions,
    adaptive: &AdaptiveConfig,
    wall: Duration,
) -> serde_json::Value {
    json!({
        "example": format!("{:?}", result.example).to_lowercase(),
        "seed": opts.seed,
        "n_realizations": opts.n_realizations,
        "l_batches": opts.l_batches,
        "k_batch": opts.k_batch,
        "alpha": opts.alpha,
        "hs": opts.hs,
        "beta": beta_tag(opts.beta),
        "delta": opts.delta,
        "n_obs": opts.n_obs,
        "spacing": opts.spacing,
        "adaptive": adaptive_json(adaptive),
        "reference_failures": result.reference_failures,
        "divergences": result
            .variants
            .iter()
            .map(|s| json!({"variant": s.variant.label(), "count": s.divergences}))
            .collect::<Vec<_>>(),
        "wall_seconds": wall.as_secs_f64(),
    })
}

/// Metadata sidecar for one filter run.
pub fn filter_summary_json(
    example: &str,
    seed: u64,
    grid: &str,
    beta: Beta,
    adaptive: Option<&AdaptiveConfig>,
    wall: Duration,
) -> serde_json::Value {
    json!({
        "example": example,
        "seed": seed,
        "grid": grid,
        "beta": beta_tag(beta),
        "adaptive": adaptive.map(adaptive_json),
        "wall_seconds": wall.as_secs_f64(),
    })
}
