//! Dense-matrix helpers and the vectorization calculus shared by the solvers.
//!
//! Storage is `nalgebra::DMatrix<f64>`. Vectorization is **row-major**:
//! `vec(D) = [d11, d12, .., d1m, d21, ..]`. With this ordering the sandwich
//! identities used to assemble the closed-loop operator are
//!
//! ```text
//! vec(A' P A) = (A ⊗ A)' vec(P)        vec(A P A') = (A ⊗ A) vec(P)
//! ```
//!
//! and both are exercised by property tests.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute tolerance for algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Relative tolerance for eigenvalue computations.
pub const EIGEN_TOL: f64 = 1e-9;

const SCHUR_MAX_ITER: usize = 20_000;

/// Builds a matrix from row-major entries, rejecting wrong counts and non-finite values.
pub fn matrix_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("empty {rows}x{cols} matrix")));
    }
    if entries.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} matrix needs {} entries, got {}",
            rows * cols,
            entries.len()
        )));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, entries))
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Symmetric matrix with exact stored symmetry (`D[i][j] == D[j][i]` bit for bit).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` only if it is square, finite and exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m, "symmetric matrix")?;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Input(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// `(m + m') / 2`; panics if `m` is not square.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let n = m.nrows();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = m[(i, i)];
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Self(out)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// `self - other`, still exactly symmetric.
    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 - &other.0)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0)
    }

    /// `T' self T`, symmetrized.
    pub fn congruence(&self, t: &DMatrix<f64>) -> SymMatrix {
        Self::symmetrize(&(t.transpose() * &self.0 * t))
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = SymMatrix::symmetrize(m).into_inner();
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Row-major stacking of all entries.
pub fn vec(d: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        d.nrows() * d.ncols(),
        (0..d.nrows()).flat_map(|i| (0..d.ncols()).map(move |j| d[(i, j)])),
    )
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v.as_slice()))
}

/// Number of free entries of an `n x n` symmetric matrix.
pub const fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn upper_triangle(d: &DMatrix<f64>, off_diag: f64) -> DVector<f64> {
    let n = d.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for i in 0..n {
        out.push(d[(i, i)]);
        for j in (i + 1)..n {
            out.push(off_diag * d[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Upper triangle, diagonal included, row by row; no scaling.
pub fn svec(d: &SymMatrix) -> DVector<f64> {
    upper_triangle(d, 1.0)
}

/// Same ordering as [`svec`] with off-diagonals doubled, so that
/// `svec(P) · svec_weighted(x x') = x' P x`.
pub fn svec_weighted(d: &SymMatrix) -> DVector<f64> {
    upper_triangle(d, 2.0)
}

/// Inverse of [`svec`].
pub fn unsvec(v: &[f64], n: usize) -> Result<SymMatrix> {
    if v.len() != svec_len(n) {
        return Err(Error::Dimension(format!(
            "half-vectorization of a {n}x{n} matrix has {} entries, got {}",
            svec_len(n),
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut it = v.iter();
    for i in 0..n {
        for j in i..n {
            let val = *it.next().expect("length checked");
            m[(i, j)] = val;
            m[(j, i)] = val;
        }
    }
    Ok(SymMatrix(m))
}

/// `x x'`.
pub fn mat_outer(x: &DVector<f64>) -> SymMatrix {
    SymMatrix(x * x.transpose())
}

/// `x x' - y y'`, the rank-two difference used for regression rows.
pub fn outer_diff(x: &DVector<f64>, y: &DVector<f64>) -> SymMatrix {
    SymMatrix(x * x.transpose() - y * y.transpose())
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Largest eigenvalue modulus, from a real Schur decomposition.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "spectral radius input")?;
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `A^k`.
pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Dense LU solve (with one refinement step) returning the solution and the
/// 1-norm condition number of `m`.
pub fn solve_with_condition(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let lu = m.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or(Error::Degenerate { condition: f64::INFINITY })?;
    let condition = norm1(m) * norm1(&inv);
    let mut x = lu
        .solve(rhs)
        .ok_or(Error::Degenerate { condition: f64::INFINITY })?;
    // one step of iterative refinement
    if let Some(dx) = lu.solve(&(rhs - m * &x)) {
        x += dx;
    }
    Ok((x, condition))
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
