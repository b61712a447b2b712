//! Propagation of the first two conditional moments between observations.
//!
//! For a linearized model the pair (y, P) evolves along the flow of a single
//! augmented matrix exponential: w = e^{M(τ)h}·u, with y' read from one block
//! of w and vec(P') from another. One exponential per node serves both
//! moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{expm, kron, kron_sum, unvec, vec_kron_sum, vec_mat};
use crate::model::DiffusionModel;
use crate::wll::{linearize, Beta, LinearizationData};

/// Conditional mean y and non-central second moment P = E[xxᵀ] at time t.
#[derive(Clone, Debug)]
pub struct MomentState {
    pub t: f64,
    pub y: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl MomentState {
    /// Validates shape, symmetry of P, and near-positive-semidefiniteness of
    /// the variance V = P − yyᵀ. P is stored symmetrized.
    pub fn new(t: f64, y: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        let d = y.len();
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::dim(format!("P must be {d}x{d}")));
        }
        if !t.is_finite() || y.iter().any(|x| !x.is_finite()) || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite moment state"));
        }
        let scale = p.amax().max(1e-300);
        if (&p - p.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("P is not symmetric"));
        }
        let p = 0.5 * (&p + p.transpose());
        let v = &p - &y * y.transpose();
        let min_eig = nalgebra::SymmetricEigen::new(v.clone()).eigenvalues.min();
        if min_eig < -1e-8 * v.trace().abs() - 1e-12 * (1.0 + scale) {
            return Err(Error::invalid(format!(
                "variance has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(MomentState { t, y, p })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// Central second moment V = P − yyᵀ.
    pub fn variance(&self) -> DMatrix<f64> {
        &self.p - &self.y * self.y.transpose()
    }
}

/// Dimension of the augmented system for state dimension d.
pub fn augmented_dim(d: usize) -> usize {
    d * d + 2 * d + 7
}

/// The augmented matrix M(τ) and initial vector u whose exponential flow
/// carries both moments.
pub struct AugmentedSystem {
    pub m_mat: DMatrix<f64>,
    pub u_vec: DVector<f64>,
    d: usize,
}

impl AugmentedSystem {
    pub fn state_dim(&self) -> usize {
        self.d
    }

    /// Read the stepped moments out of w = Φ·u: y' = y + (w2-block mean rows),
    /// vec(P') = (P-block rows), P' symmetrized.
    pub fn extract(&self, y: &DVector<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.d;
        let dd = d * d;
        if w.len() != augmented_dim(d) || y.len() != d {
            return Err(Error::dim("flow vector does not match augmented layout"));
        }
        let ynew = y + w.rows(dd + d + 2, d);
        let p = unvec(&w.rows(0, dd).into_owned(), d)?;
        Ok((ynew, 0.5 * (&p + p.transpose())))
    }
}

/// Assemble M(τ) and u from the linearization at (state.t, state.y) and the
/// current second moment.
/// The coefficient blocks of the moment differential equations at one
/// linearization point: d(vecP)/dt = 𝒜·vecP + vec(β₁+θβ₂+θ²β₃) + (β₄+θβ₅)y.
pub(crate) struct MomentBlocks {
    pub cal_a: DMatrix<f64>,
    pub beta1: DMatrix<f64>,
    pub beta2: DMatrix<f64>,
    pub beta3: DMatrix<f64>,
    pub beta4: DMatrix<f64>,
    pub beta5: DMatrix<f64>,
}

pub(crate) fn moment_blocks(lin: &LinearizationData) -> Result<MomentBlocks> {
    let d = lin.a_mat.nrows();
    let mut cal_a = kron_sum(&lin.a_mat, &lin.a_mat)?;
    for b in &lin.b_mats {
        cal_a += kron(b, b);
    }

    let mut beta1 = DMatrix::zeros(d, d);
    let mut beta2 = DMatrix::zeros(d, d);
    let mut beta3 = DMatrix::zeros(d, d);
    let mut beta4 = vec_kron_sum(&lin.a0);
    let mut beta5 = vec_kron_sum(&lin.a1);
    for i in 0..lin.b_mats.len() {
        let (b0, b1, bm) = (&lin.b0[i], &lin.b1[i], &lin.b_mats[i]);
        beta1 += b0 * b0.transpose();
        beta2 += b0 * b1.transpose() + b1 * b0.transpose();
        beta3 += b1 * b1.transpose();
        beta4 += b0.kronecker(bm) + bm.kronecker(b0);
        beta5 += b1.kronecker(bm) + bm.kronecker(b1);
    }
    Ok(MomentBlocks { cal_a, beta1, beta2, beta3, beta4, beta5 })
}

pub fn build_augmented(lin: &LinearizationData, state: &MomentState) -> Result<AugmentedSystem> {
    let d = state.dim();
    if lin.a_mat.nrows() != d {
        return Err(Error::dim("linearization does not match state dimension"));
    }
    if (lin.base_time - state.t).abs() > 1e-12 * state.t.abs().max(1.0) {
        return Err(Error::invalid(
            "linearization base time must equal state time",
        ));
    }
    let dd = d * d;
    let n = augmented_dim(d);
    let y = &state.y;

    let MomentBlocks { cal_a, beta1, beta2, beta3, beta4, beta5 } = moment_blocks(lin)?;

    let bb1 = vec_mat(&beta1)? + &beta4 * y;
    let bb2 = vec_mat(&beta2)? + &beta5 * y;
    let bb3 = vec_mat(&beta3)?;

    // 𝐂(τ) = [[A, a₁, A·y+a₀], [0, 0, 1], [0, 0, 0]]
    let mut cmat = DMatrix::zeros(d + 2, d + 2);
    cmat.view_mut((0, 0), (d, d)).copy_from(&lin.a_mat);
    cmat.view_mut((0, d), (d, 1)).copy_from(&lin.a1);
    cmat.view_mut((0, d + 1), (d, 1)).copy_from(&(&lin.a_mat * y + &lin.a0));
    cmat[(d, d + 1)] = 1.0;

    let s0 = dd + 2 * d + 4;
    let mut m_mat = DMatrix::zeros(n, n);
    m_mat.view_mut((0, 0), (dd, dd)).copy_from(&cal_a);
    // ℬ₅ = β₅·L and ℬ₄ = β₄·L with L = [I_d 0_{d×2}]: plain zero-padding.
    m_mat.view_mut((0, dd), (dd, d)).copy_from(&beta5);
    m_mat.view_mut((0, dd + d + 2), (dd, d)).copy_from(&beta4);
    m_mat.view_mut((0, s0), (dd, 1)).copy_from(&bb3);
    m_mat.view_mut((0, s0 + 1), (dd, 1)).copy_from(&bb2);
    m_mat.view_mut((0, s0 + 2), (dd, 1)).copy_from(&bb1);
    m_mat.view_mut((dd, dd), (d + 2, d + 2)).copy_from(&cmat);
    m_mat
        .view_mut((dd, dd + d + 2), (d + 2, d + 2))
        .copy_from(&DMatrix::identity(d + 2, d + 2));
    m_mat
        .view_mut((dd + d + 2, dd + d + 2), (d + 2, d + 2))
        .copy_from(&cmat);
    m_mat[(s0, s0 + 1)] = 2.0;
    m_mat[(s0 + 1, s0 + 2)] = 1.0;

    let mut u_vec = DVector::zeros(n);
    u_vec.rows_mut(0, dd).copy_from(&vec_mat(&state.p)?);
    u_vec[dd + 2 * d + 3] = 1.0;
    u_vec[n - 1] = 1.0;

    Ok(AugmentedSystem { m_mat, u_vec, d })
}

pub(crate) fn divergence(step: usize, t: f64, e: Error) -> Error {
    match e {
        Error::Divergence { t, detail, .. } => Error::Divergence { step, t, detail },
        other => Error::Divergence {
            step,
            t,
            detail: other.to_string(),
        },
    }
}

/// One prediction step of size h from state, using the supplied linearization
/// (whose base must be the state's time and mean).
pub fn moment_step(lin: &LinearizationData, state: &MomentState, h: f64) -> Result<MomentState> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let sys = build_augmented(lin, state)?;
    let phi = expm(&(&sys.m_mat * h))?;
    let w = &phi * &sys.u_vec;
    let (ynew, pnew) = sys.extract(&state.y, &w)?;
    MomentState::new(state.t + h, ynew, pnew).map_err(|e| divergence(0, state.t + h, e))
}

/// Uniform node set over [t0, t1] with n_steps intervals; the last node is
/// exactly t1.
pub fn uniform_nodes(t0: f64, t1: f64, n_steps: usize) -> Result<Vec<f64>> {
    if !(t1 > t0) || n_steps == 0 {
        return Err(Error::invalid("need t1 > t0 and at least one step"));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut nodes: Vec<f64> = (0..n_steps).map(|i| t0 + i as f64 * h).collect();
    nodes.push(t1);
    Ok(nodes)
}

/// Propagate moments across a node set, relinearizing at every node at the
/// current predicted mean. Returns the final state and its variance.
pub fn predict_fixed(
    m: &dyn DiffusionModel,
    state: &MomentState,
    t_end: f64,
    nodes: &[f64],
    beta: Beta,
) -> Result<(MomentState, DMatrix<f64>)> {
    if nodes.len() < 2 {
        return Err(Error::invalid("need at least two nodes"));
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("nodes must be strictly increasing"));
    }
    let tol = |t: f64| 1e-12 * t.abs().max(1.0);
    if (nodes[0] - state.t).abs() > tol(state.t) {
        return Err(Error::invalid("first node must be the state time"));
    }
    if (nodes[nodes.len() - 1] - t_end).abs() > tol(t_end) {
        return Err(Error::invalid("last node must be t_end"));
    }

    let mut st = state.clone();
    for i in 0..nodes.len() - 1 {
        st.t = nodes[i];
        let lin = linearize(m, nodes[i], &st.y, beta).map_err(|e| divergence(i, nodes[i], e))?;
        st = moment_step(&lin, &st, nodes[i + 1] - nodes[i]).map_err(|e| divergence(i, nodes[i], e))?;
        st.t = nodes[i + 1];
    }
    let v = st.variance();
    Ok((st, v))
}
