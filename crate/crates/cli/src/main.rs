//! Command-line front end: simulate trajectories, run filters, and produce
//! the benchmark tables as CSV with JSON metadata sidecars.
//!
//! Identical invocations (same flags, same seed) write byte-identical CSV
//! files; anything that varies between runs, such as wall time, goes only
//! into the JSON summaries. LLFILTER_SEED in the environment overrides
//! --seed for all commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use llfilter_core::report::{
    experiment_summary_json, filter_summary_json, write_experiment_csv, write_filter_run_csv,
    write_observations_csv, write_path_csv,
};
use llfilter_core::{
    build_example, euler_path, ll_path, observe, run_adaptive_filter, run_ll_filter,
    AdaptiveConfig, Beta, ErrorKind, ExampleId, ExampleSpec, ExperimentOptions, FileConfig,
    FilterOptions, FilterRun, GridSpec, ObservationSeries, PathGrid, RngStream,
};

#[derive(Parser)]
#[command(
    name = "llfilter",
    about = "Continuous-discrete filtering via local linearization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one ground-truth trajectory with its observation series.
    Simulate(SimulateArgs),
    /// Filter one simulated realization on a chosen grid.
    Filter(FilterArgs),
    /// Run the batched Monte Carlo benchmark and emit one table per error kind.
    Bench(BenchArgs),
    /// Fit convergence orders over a stepsize ladder and report them.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct Common {
    /// Benchmark model: ex1, ex2, ex3, or ex4.
    #[arg(long)]
    example: String,
    /// JSON file overriding model parameters and tolerances.
    #[arg(long)]
    model: Option<PathBuf>,
    /// RNG seed (LLFILTER_SEED in the environment wins when set).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for realization-level parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ToleranceArgs {
    #[arg(long)]
    rtol_y: Option<f64>,
    #[arg(long)]
    atol_y: Option<f64>,
    #[arg(long)]
    rtol_p: Option<f64>,
    #[arg(long)]
    atol_p: Option<f64>,
    #[arg(long)]
    h_min: Option<f64>,
    #[arg(long)]
    h_max: Option<f64>,
}

impl ToleranceArgs {
    fn apply(&self, cfg: &mut AdaptiveConfig) {
        if let Some(v) = self.rtol_y {
            cfg.rtol_y = v;
        }
        if let Some(v) = self.atol_y {
            cfg.atol_y = v;
        }
        if let Some(v) = self.rtol_p {
            cfg.rtol_p = v;
        }
        if let Some(v) = self.atol_p {
            cfg.atol_p = v;
        }
        if let Some(v) = self.h_min {
            cfg.h_min = v;
        }
        if let Some(v) = self.h_max {
            cfg.h_max = Some(v);
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Ground-truth grid spacing.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Number of observation instants at unit spacing from t0.
    #[arg(long, default_value_t = 10)]
    n_obs: usize,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    common: Common,
    /// Node layout: "adaptive", "conventional", or a stepsize like "1/64".
    #[arg(long, default_value = "adaptive")]
    grid: String,
    /// Linearization order.
    #[arg(long, default_value_t = 1)]
    beta: u8,
    #[command(flatten)]
    tol: ToleranceArgs,
    /// Ground-truth grid spacing.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Number of observation instants at unit spacing from t0.
    #[arg(long, default_value_t = 10)]
    n_obs: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Realizations; must equal (batches) x (batch size).
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Batch size K; the batch count is n / K.
    #[arg(long, default_value_t = 10)]
    k_batch: usize,
    /// Comma-separated stepsizes, rational literals allowed: 1/16,1/32.
    #[arg(long, default_value = "1/16,1/32,1/64,1/128")]
    hs: String,
    /// Linearization order.
    #[arg(long, default_value_t = 1)]
    beta: u8,
    /// Ground-truth grid spacing.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[command(flatten)]
    tol: ToleranceArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Error series to fit: filter-mean, filter-variance, prediction-mean,
    /// or prediction-variance.
    #[arg(long, default_value = "prediction-mean")]
    target: String,
}

/// Accepts plain decimals and rational literals such as "1/64".
fn parse_stepsize(text: &str) -> Result<f64> {
    let v = match text.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().context("bad stepsize numerator")?;
            let d: f64 = den.trim().parse().context("bad stepsize denominator")?;
            n / d
        }
        None => text.trim().parse().context("bad stepsize")?,
    };
    if !(v > 0.0) || !v.is_finite() {
        bail!("stepsize {text} must be positive and finite");
    }
    Ok(v)
}

fn parse_stepsizes(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_stepsize)
        .collect()
}

fn parse_beta(v: u8) -> Result<Beta> {
    match v {
        1 => Ok(Beta::One),
        2 => Ok(Beta::Two),
        other => bail!("--beta must be 1 or 2, got {other}"),
    }
}

fn parse_target(text: &str) -> Result<ErrorKind> {
    match text {
        "filter-mean" => Ok(ErrorKind::FilterMean),
        "filter-variance" => Ok(ErrorKind::FilterVariance),
        "prediction-mean" => Ok(ErrorKind::PredictionMean),
        "prediction-variance" => Ok(ErrorKind::PredictionVariance),
        other => bail!(
            "--target must be one of filter-mean, filter-variance, \
             prediction-mean, prediction-variance; got {other}"
        ),
    }
}

struct Setup {
    spec: ExampleSpec,
    file_cfg: FileConfig,
    seed: u64,
}

impl Common {
    fn setup(&self) -> Result<Setup> {
        let id: ExampleId = self.example.parse()?;
        let file_cfg = match &self.model {
            Some(path) => FileConfig::from_path(path)
                .with_context(|| format!("loading model config {}", path.display()))?,
            None => FileConfig::default(),
        };
        let spec = build_example(id, &file_cfg)?;
        let seed = match std::env::var("LLFILTER_SEED") {
            Ok(text) => text
                .trim()
                .parse()
                .map_err(|_| anyhow!("LLFILTER_SEED must be an unsigned integer, got {text:?}"))?,
            Err(_) => self.seed,
        };
        if let Some(workers) = self.workers {
            // The global pool can only be sized once; later commands in the
            // same process would keep the first size, which the one-shot CLI
            // never hits.
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global()
                .context("configuring worker threads")?;
        }
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        Ok(Setup {
            spec,
            file_cfg,
            seed,
        })
    }
}

/// Tolerances resolve in order: built-in per-example values, then the JSON
/// model file, then explicit flags.
fn resolve_adaptive(setup: &Setup, tol: &ToleranceArgs) -> AdaptiveConfig {
    let mut cfg = setup.spec.default_adaptive();
    setup.file_cfg.apply_adaptive(&mut cfg);
    tol.apply(&mut cfg);
    cfg
}

fn simulate_realization(
    spec: &ExampleSpec,
    delta: f64,
    n_obs: usize,
    seed: u64,
) -> Result<(llfilter_core::Path, ObservationSeries)> {
    let t_end = spec.t0 + (n_obs - 1) as f64;
    let grid = PathGrid::spanning(spec.t0, t_end, delta)?;
    let m = spec.model.as_ref();
    let path = if spec.additive_noise {
        ll_path(m, &grid, &spec.x0, &RngStream::for_path(seed, 0))?
    } else {
        euler_path(m, &grid, &spec.x0, &RngStream::for_path(seed, 0))?
    };
    let obs_model = spec.observation_model(n_obs, 1.0)?;
    let data = observe(&path, &obs_model, &RngStream::for_observations(seed, 0))?;
    Ok((path, data))
}

fn write_file<F: FnOnce(&mut BufWriter<File>) -> llfilter_core::Result<()>>(
    dir: &Path,
    name: &str,
    f: F,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let setup = args.common.setup()?;
    let started = Instant::now();
    let (path, data) = simulate_realization(&setup.spec, args.delta, args.n_obs, setup.seed)?;
    let out = &args.common.out;
    let path_csv = write_file(out, "path.csv", |w| write_path_csv(w, &path))?;
    let obs_csv = write_file(out, "observations.csv", |w| write_observations_csv(w, &data))?;
    let summary = json!({
        "example": args.common.example,
        "seed": setup.seed,
        "delta": args.delta,
        "n_obs": args.n_obs,
        "n_nodes": path.len(),
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    let summary_json = write_json(out, "summary.json", &summary)?;
    println!(
        "wrote {}, {}, {}",
        path_csv.display(),
        obs_csv.display(),
        summary_json.display()
    );
    Ok(())
}

enum GridChoice {
    Adaptive(AdaptiveConfig),
    Fixed(GridSpec),
}

fn parse_grid(text: &str, adaptive: AdaptiveConfig) -> Result<GridChoice> {
    match text {
        "adaptive" => Ok(GridChoice::Adaptive(adaptive)),
        "conventional" => Ok(GridChoice::Fixed(GridSpec::Conventional)),
        other => Ok(GridChoice::Fixed(GridSpec::Uniform(parse_stepsize(other)?))),
    }
}

fn cmd_filter(args: &FilterArgs) -> Result<()> {
    let setup = args.common.setup()?;
    let beta = parse_beta(args.beta)?;
    let adaptive = resolve_adaptive(&setup, &args.tol);
    let choice = parse_grid(&args.grid, adaptive.clone())?;
    let started = Instant::now();

    let (_, data) = simulate_realization(&setup.spec, args.delta, args.n_obs, setup.seed)?;
    let obs_model = setup.spec.observation_model(args.n_obs, 1.0)?;
    let init = setup.spec.initial_state()?;
    let fopts = FilterOptions::default();
    let m = setup.spec.model.as_ref();
    let run: FilterRun = match &choice {
        GridChoice::Adaptive(cfg) => {
            run_adaptive_filter(m, &obs_model, &data, cfg, beta, &init, &fopts)?
        }
        GridChoice::Fixed(grid) => {
            run_ll_filter(m, &obs_model, &data, grid, beta, &init, &fopts)?
        }
    };

    let out = &args.common.out;
    let run_csv = write_file(out, "run.csv", |w| write_filter_run_csv(w, &run))?;
    let adaptive_echo = match &choice {
        GridChoice::Adaptive(cfg) => Some(cfg),
        GridChoice::Fixed(_) => None,
    };
    let summary = filter_summary_json(
        &args.common.example,
        setup.seed,
        &args.grid,
        beta,
        adaptive_echo,
        started.elapsed(),
    );
    let summary_json = write_json(out, "summary.json", &summary)?;
    println!("wrote {}, {}", run_csv.display(), summary_json.display());
    Ok(())
}

fn experiment_options(args: &ExperimentArgs, setup: &Setup) -> Result<ExperimentOptions> {
    let hs = parse_stepsizes(&args.hs)?;
    if hs.is_empty() {
        bail!("--hs needs at least one stepsize");
    }
    if args.k_batch == 0 || args.n % args.k_batch != 0 {
        bail!(
            "--n {} must be a positive multiple of --k-batch {}",
            args.n,
            args.k_batch
        );
    }
    Ok(ExperimentOptions {
        n_realizations: args.n,
        l_batches: args.n / args.k_batch,
        k_batch: args.k_batch,
        hs,
        beta: parse_beta(args.beta)?,
        delta: args.delta,
        adaptive: Some(resolve_adaptive(setup, &args.tol)),
        seed: setup.seed,
        ..ExperimentOptions::default()
    })
}

fn kind_file_name(kind: ErrorKind) -> String {
    format!("table_{}.csv", kind.label())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let setup = args.experiment.common.setup()?;
    let opts = experiment_options(&args.experiment, &setup)?;
    let started = Instant::now();
    let result = llfilter_core::run_experiment(&setup.spec, &opts)?;
    let out = &args.experiment.common.out;
    let mut written = Vec::new();
    for kind in ErrorKind::ALL {
        written.push(write_file(out, &kind_file_name(kind), |w| {
            write_experiment_csv(w, &result, kind)
        })?);
    }
    let adaptive = opts.adaptive.clone().unwrap();
    let summary = experiment_summary_json(&result, &opts, &adaptive, started.elapsed());
    written.push(write_json(out, "summary.json", &summary)?);
    let names: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    println!("wrote {}", names.join(", "));
    Ok(())
}

fn cmd_convergence(args: &ConvergenceArgs) -> Result<()> {
    let setup = args.experiment.common.setup()?;
    let kind = parse_target(&args.target)?;
    let opts = experiment_options(&args.experiment, &setup)?;
    let started = Instant::now();
    let result = llfilter_core::run_experiment(&setup.spec, &opts)?;
    let kind_idx = ErrorKind::ALL.iter().position(|k| *k == kind).unwrap();

    let out = &args.experiment.common.out;
    let csv = write_file(out, "convergence.csv", |w| {
        writeln!(w, "row_label,beta_hat")?;
        for (k, row) in result.orders.iter().enumerate() {
            writeln!(w, "{},{:e}", kind.row_label(k), row[kind_idx])?;
        }
        Ok(())
    })?;
    let overall = result.order_of_means(kind)?;
    let summary = json!({
        "example": args.experiment.common.example,
        "target": kind.label(),
        "seed": opts.seed,
        "n_realizations": opts.n_realizations,
        "hs": opts.hs,
        "beta_hat_overall": overall,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    let summary_json = write_json(out, "summary.json", &summary)?;

    for (k, row) in result.orders.iter().enumerate() {
        println!("{}: beta_hat = {:.3}", kind.row_label(k), row[kind_idx]);
    }
    println!("overall {}: beta_hat = {overall:.3}", kind.label());
    println!("wrote {}, {}", csv.display(), summary_json.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Convergence(args) => cmd_convergence(args),
    };
    if let Err(err) = result {
        let record = json!({
            "error": format!("{err:#}"),
        });
        eprintln!("{record}");
        std::process::exit(1);
    }
}
