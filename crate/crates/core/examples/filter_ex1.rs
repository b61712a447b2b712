//! Simulate one Example 1 realization and filter it on a uniform grid.

use llfilter_core::{
    build_example, euler_path, observe, run_ll_filter, Beta, ExampleId, FileConfig,
    FilterOptions, GridSpec, PathGrid, RngStream,
};

fn main() -> llfilter_core::Result<()> {
    let spec = build_example(ExampleId::Ex1, &FileConfig::default())?;
    let obs = spec.observation_model(10, 1.0)?;

    let grid = PathGrid::spanning(spec.t0, spec.t0 + 9.0, 1e-3)?;
    let truth = euler_path(spec.model.as_ref(), &grid, &spec.x0, &RngStream::for_path(7, 0))?;
    let data = observe(&truth, &obs, &RngStream::for_observations(7, 0))?;

    let run = run_ll_filter(
        spec.model.as_ref(),
        &obs,
        &data,
        &GridSpec::Uniform(1.0 / 64.0),
        Beta::One,
        &spec.initial_state()?,
        &FilterOptions::default(),
    )?;

    for s in &run.steps {
        println!(
            "t = {:>4.1}  predicted {:+.5}  filtered {:+.5}  gain {:.4}",
            s.t,
            s.pred.y[0],
            s.filt.y[0],
            s.gain[(0, 0)]
        );
    }
    Ok(())
}
