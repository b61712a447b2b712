//! Dense linear-algebra kernel: vectorization, Kronecker products/sums,
//! matrix exponential, and the filter gain solve.
//!
//! Conventions: `vec` stacks columns, so vec(A X Bᵀ) = (B ⊗ A) vec(X) and
//! (A ⊕ A) vec(P) = vec(A P + P Aᵀ).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-stacking vectorization of a square matrix: entry (i, j) lands at
/// position j·d + i.
pub fn vec_mat(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(Error::dim(format!(
            "vec_mat requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Inverse of `vec_mat`: reshape a length-d² vector into a d×d matrix.
pub fn unvec(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * d {
        return Err(Error::dim(format!(
            "unvec expects length {} for d = {}, got {}",
            d * d,
            d,
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Kronecker product; block (i, j) equals a[(i, j)]·b.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Kronecker sum a ⊕ b = a ⊗ I + I ⊗ b for square matrices of equal size.
pub fn kron_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || !b.is_square() || a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "kron_sum requires equal-size square matrices, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    Ok(a.kronecker(&eye) + eye.kronecker(b))
}

/// Kronecker sum of a d-vector with itself, read as the d²×d matrix
/// v ⊗ I_d + I_d ⊗ v. This is the unique reading under which
/// (v ⊕ v)·y = vec(v yᵀ + y vᵀ).
pub fn vec_kron_sum(v: &DVector<f64>) -> DMatrix<f64> {
    let d = v.len();
    let vm = DMatrix::from_column_slice(d, 1, v.as_slice());
    let eye = DMatrix::identity(d, d);
    vm.kronecker(&eye) + eye.kronecker(&vm)
}

// Degree-13 diagonal Pade coefficients and the matching 1-norm threshold.
const PADE13_THETA: f64 = 5.371_920_351_148_152;
const PADE13_B: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|x| x.abs()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

fn all_finite_mat(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Matrix exponential by scaling-and-squaring with the degree-13 diagonal
/// Pade approximant. Exact for the zero matrix; overflow during squaring is
/// reported rather than returned as infinities.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "expm requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !all_finite_mat(a) {
        return Err(Error::invalid("expm input has non-finite entries".to_string()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);

    let eye = DMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13_B;

    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &eye;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &eye;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut x = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::ExpmOverflow("Pade denominator is singular".to_string()))?;

    for _ in 0..s {
        x = &x * &x;
        if !all_finite_mat(&x) {
            return Err(Error::ExpmOverflow(format!(
                "entries overflow while squaring (input 1-norm {norm:.3e})"
            )));
        }
    }
    if !all_finite_mat(&x) {
        return Err(Error::ExpmOverflow("non-finite result".to_string()));
    }
    Ok(x)
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Solve K·S = V·Cᵀ with S = C·V·Cᵀ + Σ for the filter gain K.
///
/// Uses a Cholesky factorization of the symmetrized S; if that fails, a
/// diagonal ridge of 1e-14·trace(S)/r is added once, with an LU solve as the
/// last resort. The residual against the unridged S is always enforced:
/// max|K·S − V·Cᵀ| ≤ 1e-10·(1 + max|V·Cᵀ|).
pub fn solve_gain(
    v: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = v.nrows();
    let r = c.nrows();
    if !v.is_square() {
        return Err(Error::dim("solve_gain: V must be square".to_string()));
    }
    if c.ncols() != d {
        return Err(Error::dim(format!(
            "solve_gain: C is {}x{} but V is {}x{}",
            r,
            c.ncols(),
            d,
            d
        )));
    }
    if sigma.nrows() != r || sigma.ncols() != r {
        return Err(Error::dim(format!(
            "solve_gain: Sigma is {}x{} but C has {} rows",
            sigma.nrows(),
            sigma.ncols(),
            r
        )));
    }

    let cv = c * v; // r x d; (C V)ᵀ = V Cᵀ since V is symmetric
    let mut s = &cv * c.transpose() + sigma;
    s = 0.5 * (&s + s.transpose());

    let solve_with = |m: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        match nalgebra::Cholesky::new(m.clone()) {
            Some(ch) => Some(ch.solve(&cv)),
            None => m.clone().lu().solve(&cv),
        }
    };

    let sol = match nalgebra::Cholesky::new(s.clone()) {
        Some(ch) => Some(ch.solve(&cv)),
        None => {
            let ridge = 1e-14 * s.trace() / r as f64;
            let ridged = &s + DMatrix::from_diagonal_element(r, r, ridge);
            solve_with(&ridged)
        }
    };
    let sol = sol.ok_or_else(|| {
        Error::SingularInnovation("innovation covariance factorization failed".to_string())
    })?;
    let k = sol.transpose(); // d x r

    let vct = cv.transpose();
    let residual = max_abs(&(&k * &s - &vct));
    let bound = 1e-10 * (1.0 + max_abs(&vct));
    if !residual.is_finite() || residual > bound {
        return Err(Error::SingularInnovation(format!(
            "gain residual {residual:.3e} exceeds bound {bound:.3e}"
        )));
    }
    Ok(k)
}

/// Symmetric PSD square root factor for sampling: returns F with F·Fᵀ ≈ m.
/// Cholesky when possible; otherwise an eigenfactor with negative eigenvalues
/// (roundoff) clamped to zero.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::dim("psd_factor requires a square matrix".to_string()));
    }
    let sym = 0.5 * (m + m.transpose());
    if max_abs(&sym) == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(ch) = nalgebra::Cholesky::new(sym.clone()) {
        return Ok(ch.l());
    }
    let eig = nalgebra::SymmetricEigen::new(sym.clone());
    let tol = -1e-8 * eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut factor = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < tol {
            return Err(Error::invalid(format!(
                "matrix is not PSD: eigenvalue {lam:.3e}"
            )));
        }
        let scale = lam.max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] *= scale;
        }
    }
    Ok(factor)
}
