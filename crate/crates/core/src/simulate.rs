//! Ground-truth path generation and noisy sampling for the benchmark
//! protocol.
//!
//! Paths are integrated on a thin uniform grid, either by Euler or, for
//! additive-noise models, by the weak order-1 local linearization scheme
//! whose per-step transition is exact on frozen coefficients. Every
//! realization owns a counter-seeded stream so runs reproduce bit for bit
//! regardless of scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{expm, psd_factor};
use crate::model::{DiffusionModel, ObservationModel, ObservationSeries};
use crate::wll::{linearize, Beta};

/// Uniform integration grid with nodes t0 + i·delta, i = 0..n_steps.
#[derive(Clone, Copy, Debug)]
pub struct PathGrid {
    pub t0: f64,
    pub delta: f64,
    pub n_steps: usize,
}

impl PathGrid {
    pub fn new(t0: f64, delta: f64, n_steps: usize) -> Result<Self> {
        let g = PathGrid { t0, delta, n_steps };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering [t0, t_end] with spacing delta, which must divide the
    /// span to within rounding.
    pub fn spanning(t0: f64, t_end: f64, delta: f64) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::invalid(format!("empty span [{t0}, {t_end}]")));
        }
        let n = ((t_end - t0) / delta).round();
        if n < 1.0 || ((t_end - t0) - n * delta).abs() > 1e-9 * (t_end - t0) {
            return Err(Error::invalid(format!(
                "delta = {delta} does not divide the span [{t0}, {t_end}]"
            )));
        }
        PathGrid::new(t0, delta, n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta <= 0.0 || !self.t0.is_finite() {
            return Err(Error::invalid(format!(
                "grid needs finite t0 and positive delta, got t0 = {}, delta = {}",
                self.t0, self.delta
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(())
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.delta
    }

    pub fn t_end(&self) -> f64 {
        self.node(self.n_steps)
    }
}

/// Reproducible Gaussian source: a fixed seed plus a per-realization stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Stream feeding the state path of one realization. Even ids are
    /// reserved for paths, odd ids for observation noise, so the pair never
    /// collides.
    pub fn for_path(seed: u64, realization: u64) -> Self {
        RngStream::new(seed, 2 * realization)
    }

    /// Stream feeding the observation noise of one realization.
    pub fn for_observations(seed: u64, realization: u64) -> Self {
        RngStream::new(seed, 2 * realization + 1)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }
}

/// A realized trajectory on a path grid.
#[derive(Clone, Debug)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at a grid node; times off the grid are rejected.
    pub fn at_time(&self, t: f64) -> Result<&DVector<f64>> {
        let tol = 1e-9 * t.abs().max(1.0);
        let idx = self.times.partition_point(|&u| u < t - tol);
        if idx < self.times.len() && (self.times[idx] - t).abs() <= tol {
            Ok(&self.states[idx])
        } else {
            Err(Error::invalid(format!("time {t} is not a path node")))
        }
    }
}

fn path_divergence(step: usize, t: f64) -> Error {
    Error::Divergence {
        step,
        t,
        detail: "simulated path left the finite range".into(),
    }
}

/// Euler scheme: x' = x + f·δ + Σᵢ gᵢ·√δ·ξᵢ with independent standard
/// normal ξ drawn in Wiener-component order.
pub fn euler_path(
    m: &dyn DiffusionModel,
    grid: &PathGrid,
    x0: &DVector<f64>,
    stream: &RngStream,
) -> Result<Path> {
    grid.validate()?;
    if x0.len() != m.dim() {
        return Err(Error::dim(format!(
            "initial state has length {}, model dimension is {}",
            x0.len(),
            m.dim()
        )));
    }
    let mut rng = stream.rng();
    let sqrt_delta = grid.delta.sqrt();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x.clone());
    for n in 0..grid.n_steps {
        let t = grid.node(n);
        let mut x_next = &x + m.drift(t, &x) * grid.delta;
        for i in 0..m.wiener_dim() {
            let xi: f64 = rng.sample(StandardNormal);
            x_next += m.diffusion(i, t, &x) * (sqrt_delta * xi);
        }
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(path_divergence(n + 1, grid.node(n + 1)));
        }
        x = x_next;
        states.push(x.clone());
    }
    Ok(Path {
        times: (0..=grid.n_steps).map(|i| grid.node(i)).collect(),
        states,
    })
}

/// One-step transition of the additive-noise LL scheme at (t, x): the mean
/// after delta and the exact Gaussian increment covariance
/// ∫₀^δ e^{As}GGᵀe^{Aᵀs}ds on frozen coefficients.
pub fn ll_transition(
    m: &dyn DiffusionModel,
    t: f64,
    x: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = m.dim();
    let lin = linearize(m, t, x, Beta::One)?;
    for b in &lin.b_mats {
        if b.amax() > 1e-12 * (1.0 + lin.b0.iter().map(|v| v.amax()).fold(0.0, f64::max)) {
            return Err(Error::model(
                "path scheme requires additive noise (state-independent diffusion)",
            ));
        }
    }

    // Mean flow through the (d+2) companion system, one exponential.
    let mut cmat = DMatrix::zeros(d + 2, d + 2);
    cmat.view_mut((0, 0), (d, d)).copy_from(&lin.a_mat);
    cmat.view_mut((0, d), (d, 1)).copy_from(&lin.a1);
    cmat.view_mut((0, d + 1), (d, 1))
        .copy_from(&(&lin.a_mat * x + &lin.a0));
    cmat[(d, d + 1)] = 1.0;
    let flow = expm(&(cmat * delta))?;
    let mean = x + flow.view((0, d + 1), (d, 1));

    // Increment covariance by the block-exponential quadrature.
    let g = m.diffusion_matrix(t, x);
    let ggt = &g * g.transpose();
    let two_d = 2 * d;
    let mut h = DMatrix::zeros(two_d, two_d);
    h.view_mut((0, 0), (d, d)).copy_from(&(-&lin.a_mat));
    h.view_mut((0, d), (d, d)).copy_from(&ggt);
    h.view_mut((d, d), (d, d)).copy_from(&lin.a_mat.transpose());
    let f = expm(&(h * delta))?;
    let f2 = f.view((0, d), (d, d));
    let f3 = f.view((d, d), (d, d));
    let q = f3.transpose() * f2;
    Ok((mean, 0.5 * (&q + q.transpose())))
}

/// Additive-noise weak order-1 LL path: per node the deterministic part
/// advances by the LL flow and the stochastic part adds a Gaussian increment
/// with the exact frozen-coefficient covariance.
pub fn ll_path(
    m: &dyn DiffusionModel,
    grid: &PathGrid,
    x0: &DVector<f64>,
    stream: &RngStream,
) -> Result<Path> {
    grid.validate()?;
    let d = m.dim();
    if x0.len() != d {
        return Err(Error::dim(format!(
            "initial state has length {}, model dimension is {d}",
            x0.len()
        )));
    }
    let mut rng = stream.rng();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x.clone());
    for n in 0..grid.n_steps {
        let t = grid.node(n);
        let (mean, q) = ll_transition(m, t, &x, grid.delta)?;
        let factor = psd_factor(&q)?;
        let xi = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let x_next = mean + factor * xi;
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(path_divergence(n + 1, grid.node(n + 1)));
        }
        x = x_next;
        states.push(x.clone());
    }
    Ok(Path {
        times: (0..=grid.n_steps).map(|i| grid.node(i)).collect(),
        states,
    })
}

/// Sample z_k = C·x(t_k) + e_k at the scheduled observation times, which
/// must be path nodes. e_k ~ N(0, Σ_k); Σ = 0 reproduces Cx exactly.
pub fn observe(
    path: &Path,
    obs: &ObservationModel,
    stream: &RngStream,
) -> Result<ObservationSeries> {
    let mut rng = stream.rng();
    let r = obs.obs_dim();
    let mut values = Vec::with_capacity(obs.times.len());
    for (k, &tk) in obs.times.iter().enumerate() {
        let x = path.at_time(tk)?;
        let sigma = obs.sigma_at(k)?;
        let factor = psd_factor(sigma)?;
        let xi = DVector::from_fn(r, |_, _| rng.sample(StandardNormal));
        values.push(&obs.c * x + factor * xi);
    }
    ObservationSeries::new(obs.times.clone(), values)
}
