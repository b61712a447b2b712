//! Continuous-discrete filtering for diffusion state-space models.
//!
//! States follow an Ito SDE observed linearly at discrete times under
//! Gaussian noise. Between observations the first two conditional moments are
//! propagated by local linearization: one matrix exponential of an augmented
//! system per node carries both the mean and the second moment. On top of
//! the fixed-grid scheme sits a step-doubling controller that picks the node
//! spacing from per-field tolerances. Measurement updates use the linear
//! minimum-variance gain.
//!
//! The crate also ships the benchmark protocol used to measure the filters:
//! strong path simulation, batched Monte Carlo error estimates with
//! confidence intervals, and observed-order fits.

pub mod adaptive;
pub mod bench;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod report;
pub mod simulate;
pub mod wll;

pub use adaptive::{
    adaptive_predict, initial_stepsize, run_adaptive_filter, AdaptiveConfig, AdaptivePrediction,
    StepRecord,
};
pub use bench::{
    batch_ci, error_sample, fit_order, run_example_experiment, run_experiment,
    student_t_quantile, ConfidenceEstimate, ErrorKind, ErrorSample, ExperimentOptions,
    ExperimentResult, FilterVariant, VariantSummary,
};
pub use error::{Error, Result};
pub use filter::{
    run_exact_lmv_filter, run_ll_filter, FilterOptions, FilterRun, FilterStep, GridSpec,
};
pub use model::{
    augment_nonlinear_observation, build_example, validate_model, AugmentedModel, DiffusionModel,
    ExampleId, ExampleSpec, FileConfig, NoiseCov, NonlinearObservation, ObservationModel,
    ObservationSeries,
};
pub use moments::{moment_step, predict_fixed, uniform_nodes, MomentState};
pub use simulate::{euler_path, ll_path, ll_transition, observe, Path, PathGrid, RngStream};
pub use wll::{linearize, Beta, LinearizationData};
