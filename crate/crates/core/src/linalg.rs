//! Sparse matrices, the direct solver and spectral estimates.
//!
//! Sparse storage and factorizations come from `faer`; vectors are `nalgebra`
//! column vectors.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::active::CompositeDGSpace;
use crate::geometry::Domain;

/// Relative residual accepted from the direct solver.
pub const SOLVE_TOLERANCE: f64 = 1e-10;
/// Largest size for which condition numbers use a dense SVD.
pub const DENSE_LIMIT: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("matrix is singular or nearly so: relative residual {residual:.3e}, worst at row {row}")]
    Singular { row: usize, residual: f64 },
    #[error("spectral estimate failed: {0}")]
    Estimation(String),
}

/// Compressed sparse column matrix of `f64`.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    inner: SparseColMat<usize, f64>,
}

impl SparseMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let t: Vec<Triplet<usize, usize, f64>> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let inner = SparseColMat::try_new_from_triplets(nrows, ncols, &t).expect("triplet indices in range");
        Self { inner }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, &[])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    /// Stored entries, explicit zeros included.
    pub fn nnz(&self) -> usize {
        self.inner.val().len()
    }

    pub fn faer(&self) -> &SparseColMat<usize, f64> {
        &self.inner
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols() {
            let rows = self.inner.row_idx_of_col_raw(j);
            let vals = self.inner.val_of_col(j);
            out.extend(rows.iter().zip(vals).map(|(&i, &v)| (i, j, v)));
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let rows = self.inner.row_idx_of_col_raw(j);
        let vals = self.inner.val_of_col(j);
        rows.iter().zip(vals).filter(|(&r, _)| r == i).map(|(_, &v)| v).sum()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = DVector::zeros(self.nrows());
        for j in 0..self.ncols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (&i, &v) in self.inner.row_idx_of_col_raw(j).iter().zip(self.inner.val_of_col(j)) {
                y[i] += v * xj;
            }
        }
        y
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows());
        DVector::from_iterator(
            self.ncols(),
            (0..self.ncols()).map(|j| {
                self.inner.row_idx_of_col_raw(j).iter().zip(self.inner.val_of_col(j)).map(|(&i, &v)| v * x[i]).sum()
            }),
        )
    }

    /// `x^T A y`.
    pub fn quad_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(y))
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols(), self.nrows(), &t)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows(), self.ncols()), (other.nrows(), other.ncols()));
        let mut t = self.triplets();
        t.extend(other.triplets());
        Self::from_triplets(self.nrows(), self.ncols(), &t)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, alpha * v)).collect();
        Self::from_triplets(self.nrows(), self.ncols(), &t)
    }

    /// `(A + A^T) / 2`.
    pub fn symmetric_part(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    /// `S A S` for a diagonal `S`.
    pub fn scale_symmetric(&self, s: &[f64]) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, s[i] * v * s[j])).collect();
        Self::from_triplets(self.nrows(), self.ncols(), &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.val().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.add(&self.transpose().scale(-1.0)).max_abs()
    }

    /// Largest `|a_ij + a_ji|`.
    pub fn skew_defect(&self) -> f64 {
        self.add(&self.transpose()).max_abs()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Coordinate listing, one `row col value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows(), self.ncols(), self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

fn to_mat(x: &DVector<f64>) -> Mat<f64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

fn from_mat(m: &Mat<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), (0..m.nrows()).map(|i| m[(i, 0)]))
}

/// Sparse LU factorization with partial pivoting.
pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    matrix: SparseMatrix,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.matrix.nrows()).finish()
    }
}

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
        }
        let lu = a.faer().sp_lu().map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(Self { lu, matrix: a.clone() })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn raw(&self, b: &DVector<f64>, transpose: bool) -> DVector<f64> {
        let rhs = to_mat(b);
        let x = if transpose { self.lu.solve_transpose(&rhs) } else { self.lu.solve(&rhs) };
        from_mat(&x)
    }

    fn apply(&self, x: &DVector<f64>, transpose: bool) -> DVector<f64> {
        if transpose {
            self.matrix.tr_mul_vec(x)
        } else {
            self.matrix.mul_vec(x)
        }
    }

    /// Solves with up to two steps of iterative refinement and checks the residual.
    fn checked(&self, b: &DVector<f64>, transpose: bool) -> Result<DVector<f64>, LinalgError> {
        if b.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch(b.len(), self.dim()));
        }
        let bnorm = b.norm();
        if bnorm == 0.0 {
            return Ok(DVector::zeros(self.dim()));
        }
        let mut x = self.raw(b, transpose);
        let mut r = b - self.apply(&x, transpose);
        for _ in 0..2 {
            if !x.iter().all(|v| v.is_finite()) || r.norm() <= SOLVE_TOLERANCE * bnorm {
                break;
            }
            x += self.raw(&r, transpose);
            r = b - self.apply(&x, transpose);
        }
        let rel = r.norm() / bnorm;
        if !rel.is_finite() || rel > SOLVE_TOLERANCE {
            let row = r.iamax();
            return Err(LinalgError::Singular { row, residual: if rel.is_finite() { rel } else { f64::INFINITY } });
        }
        Ok(x)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        self.checked(b, false)
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        self.checked(b, true)
    }
}

/// Solves `A x = b` with a sparse direct method.
pub fn solve(a: &SparseMatrix, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    Factorization::new(a)?.solve(b)
}

/// Diagonal scaling with `sqrt(h)` on the interface block.
pub fn surface_scaling(space: &CompositeDGSpace, h: f64) -> Vec<f64> {
    let mut s = vec![1.0; space.dim()];
    let start = space.offset(Domain::Interface);
    for v in &mut s[start..start + space.block_len(Domain::Interface)] {
        *v = h.sqrt();
    }
    s
}

/// `S A S` with `S = diag(sqrt(h))` on interface unknowns and 1 elsewhere.
pub fn scaled_matrix(a: &SparseMatrix, space: &CompositeDGSpace, h: f64) -> SparseMatrix {
    a.scale_symmetric(&surface_scaling(space, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMethod {
    DenseSvd,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    pub value: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub method: ConditionMethod,
    /// False if an iterative estimate stopped before stagnating.
    pub converged: bool,
}

/// Spectral condition number `sigma_max / sigma_min`.
pub fn condition_number(a: &SparseMatrix) -> Result<ConditionEstimate, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.nrows() <= DENSE_LIMIT {
        let s = a.to_dense().singular_values().map_err(|e| LinalgError::Estimation(format!("{e:?}")))?;
        let max = s.iter().cloned().fold(0.0, f64::max);
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(ConditionEstimate {
            value: if min > 0.0 { max / min } else { f64::INFINITY },
            sigma_max: max,
            sigma_min: min,
            method: ConditionMethod::DenseSvd,
            converged: true,
        });
    }
    condition_number_lanczos(a, 1e-4, 400)
}

/// Lanczos estimates on `A^T A` and on its inverse through a sparse LU.
pub fn condition_number_lanczos(a: &SparseMatrix, tol: f64, max_iter: usize) -> Result<ConditionEstimate, LinalgError> {
    let n = a.nrows();
    let (big, c1) = lanczos_max(n, |x| a.tr_mul_vec(&a.mul_vec(x)), tol, max_iter)?;
    let f = Factorization::new(a)?;
    let mut failure = None;
    let (inv, c2) = lanczos_max(
        n,
        |x| match f.solve_transpose(x).and_then(|y| f.solve(&y)) {
            Ok(z) => z,
            Err(e) => {
                failure.get_or_insert(e);
                DVector::zeros(n)
            }
        },
        tol,
        max_iter,
    )?;
    if let Some(e) = failure {
        return Err(LinalgError::Estimation(format!("inverse iteration broke down: {e}")));
    }
    if !(inv > 0.0) {
        return Err(LinalgError::Estimation("inverse iteration broke down".into()));
    }
    let sigma_max = big.sqrt();
    let sigma_min = 1.0 / inv.sqrt();
    Ok(ConditionEstimate {
        value: sigma_max / sigma_min,
        sigma_max,
        sigma_min,
        method: ConditionMethod::Lanczos,
        converged: c1 && c2,
    })
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by Lanczos with
/// full reorthogonalization. Returns the estimate and whether it stagnated.
fn lanczos_max(
    n: usize,
    mut op: impl FnMut(&DVector<f64>) -> DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, bool), LinalgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = 0.0;
    for k in 0..max_iter.min(n) {
        let mut w = op(&basis[k]);
        let a = w.dot(&basis[k]);
        alpha.push(a);
        for v in &basis {
            let c = w.dot(v);
            w.axpy(-c, v, 1.0);
        }
        for v in &basis {
            let c = w.dot(v);
            w.axpy(-c, v, 1.0);
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let est = SymmetricEigen::new(t).eigenvalues.max();
        if !est.is_finite() {
            return Err(LinalgError::Estimation("non-finite Ritz value".into()));
        }
        let b = w.norm();
        if k > 0 && (est - last).abs() <= tol * est.abs() {
            return Ok((est, true));
        }
        if b <= 1e-14 * est.abs().max(f64::MIN_POSITIVE) {
            // Invariant subspace: the Ritz value is exact.
            return Ok((est, true));
        }
        last = est;
        beta.push(b);
        basis.push(w / b);
    }
    Ok((last, false))
}

/// Smallest eigenvalue of `A x = lambda B x` for symmetric `A` and positive
/// semidefinite `B`, restricted to the complement of the kernel of `B`.
pub fn pencil_min_eigenvalue(a: &SparseMatrix, b: &SparseMatrix) -> Result<f64, LinalgError> {
    let n = a.nrows();
    if b.nrows() != n || a.ncols() != n || b.ncols() != n {
        return Err(LinalgError::DimensionMismatch(a.nrows(), b.nrows()));
    }
    let ad = a.to_dense();
    let bd = b.to_dense();
    if let Ok(llt) = bd.llt(Side::Lower) {
        // L^{-1} A L^{-T}
        let l = llt.L();
        let mut c = ad.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), faer::Par::Seq);
        let mut ct = c.transpose().to_owned();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, ct.as_mut(), faer::Par::Seq);
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
        let e = sym.self_adjoint_eigenvalues(Side::Lower).map_err(|e| LinalgError::Estimation(format!("{e:?}")))?;
        return Ok(e.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    let eig = bd.self_adjoint_eigen(Side::Lower).map_err(|e| LinalgError::Estimation(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let vecs = eig.U();
    let top = (0..n).map(|i| vals[i]).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| vals[i] > 1e-10 * top).collect();
    if keep.is_empty() {
        return Err(LinalgError::Estimation("B vanishes".into()));
    }
    let w = Mat::from_fn(n, keep.len(), |i, k| vecs[(i, keep[k])] / vals[keep[k]].sqrt());
    let c = w.transpose() * &ad * &w;
    let m = keep.len();
    let sym = Mat::from_fn(m, m, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let e = sym.self_adjoint_eigenvalues(Side::Lower).map_err(|e| LinalgError::Estimation(format!("{e:?}")))?;
    Ok(e.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Eigenvalues of a symmetric sparse matrix, ascending.
pub fn symmetric_eigenvalues(a: &SparseMatrix) -> Result<Vec<f64>, LinalgError> {
    let d = a.to_dense();
    let mut e = d.self_adjoint_eigenvalues(Side::Lower).map_err(|e| LinalgError::Estimation(format!("{e:?}")))?;
    e.sort_by(f64::total_cmp);
    Ok(e)
}
