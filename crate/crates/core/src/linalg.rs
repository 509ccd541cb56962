//! Dense row-major matrix kernels.
//!
//! Everything here is `f64`. The SVD is a one-sided Jacobi sweep, which is
//! slow for large matrices but accurate to working precision on the small
//! frame matrices this crate pools. The symmetric eigensolver is a separate
//! two-sided Jacobi iteration and backs [`spd_log_oracle`], which is kept
//! independent of the SVD path so the two can be checked against each other.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// `rows x cols` matrix with `diag` on the leading diagonal.
    pub fn from_diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    op: "from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materialising the transpose.
    pub fn tr_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "tr_matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                op: "matvec",
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), x))
            .collect())
    }

    /// `self^T * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::LengthMismatch {
                op: "tr_matvec",
                expected: self.rows,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Keeps only the leading diagonal (works for rectangular shapes).
    pub fn diag_part(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] = self[(i, i)];
        }
        out
    }

    /// Selects columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |r, c| self[(r, start + c)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64> {
        Ok(self.sub(rhs)?.max_abs())
    }

    fn negate_col(&mut self, c: usize) {
        for r in 0..self.rows {
            self.data[r * self.cols + c] = -self.data[r * self.cols + c];
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(A + A^T) / 2`.
pub fn sym(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "sym",
            rows: a.rows,
            cols: a.cols,
        });
    }
    Ok(Matrix::from_fn(a.rows, a.cols, |r, c| {
        0.5 * (a[(r, c)] + a[(c, r)])
    }))
}

/// Entrywise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

/// Full singular value decomposition `A = U * Sigma * V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `m x m` orthogonal.
    pub u: Matrix,
    /// `min(m, d)` singular values, non-increasing.
    pub s: Vec<f64>,
    /// `d x d` orthogonal.
    pub v: Matrix,
}

impl SvdFactors {
    /// `m x d` matrix with the singular values on its leading diagonal.
    pub fn sigma(&self) -> Matrix {
        Matrix::from_diag(self.u.rows(), self.v.rows(), &self.s)
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = self.u.matmul(&self.sigma()).expect("svd shapes");
        us.matmul(&self.v.transpose()).expect("svd shapes")
    }
}

/// Full SVD with the sign convention that the first nonzero entry of every
/// column of `U` is non-negative (paired columns of `V` follow).
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    let (m, d) = a.shape();
    if m == 0 || d == 0 {
        return Err(Error::DataLength {
            rows: m,
            cols: d,
            len: 0,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite { what: "svd input" });
    }
    let (u, s, v) = if m <= d {
        // A^T is tall: A^T = L S W^T  =>  A = W S L^T.
        let (l, s, w) = jacobi_tall(&a.transpose())?;
        (w, s, l)
    } else {
        let (l, s, w) = jacobi_tall(a)?;
        (l, s, w)
    };
    let mut f = SvdFactors { u, s, v };
    normalize_signs(&mut f);
    Ok(f)
}

/// One-sided Jacobi on a tall `n x k` matrix (`n >= k`). Returns the full
/// `n x n` left basis, the `k` singular values in descending order and the
/// `k x k` right rotation.
fn jacobi_tall(b: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (n, k) = b.shape();
    debug_assert!(n >= k);
    // Column-major working copy for cache-friendly column rotations.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|c| b.col(c)).collect();
    let mut w: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut e = vec![0.0; k];
            e[c] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * libm::sqrt(n as f64);

    let mut converged = k < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut w, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "one-sided Jacobi SVD",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut sv: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(i, c)| (libm::sqrt(dot(c, c)), i))
        .collect();
    // Stable so equal singular values keep their column order.
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));

    let s_max = sv.first().map_or(0.0, |x| x.0);
    let zero_tol = s_max * f64::EPSILON * (n as f64);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &(sigma, idx) in &sv {
        if sigma <= zero_tol || sigma == 0.0 {
            break;
        }
        let mut v: Vec<f64> = cols[idx].iter().map(|x| x / sigma).collect();
        reorthogonalize(&mut v, &basis);
        basis.push(v);
    }
    complete_basis(&mut basis, n);

    let left = Matrix::from_fn(n, n, |r, c| basis[c][r]);
    let right = Matrix::from_fn(k, k, |r, c| w[sv[c].1][r]);
    let s = sv.iter().map(|x| x.0).collect();
    Ok((left, s, right))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Two passes of Gram-Schmidt against `basis`, then renormalise.
fn reorthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let norm = libm::sqrt(dot(v, v));
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Extends an orthonormal set to a full basis of R^n, each time taking the
/// standard basis vector with the largest residual.
fn complete_basis(basis: &mut Vec<Vec<f64>>, n: usize) {
    while basis.len() < n {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            for _ in 0..2 {
                for b in basis.iter() {
                    let p = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= p * y;
                    }
                }
            }
            let r = libm::sqrt(dot(&e, &e));
            if best.as_ref().is_none_or(|(br, _)| r > *br + 1e-12) {
                best = Some((r, e));
            }
        }
        let (r, mut e) = best.expect("n > basis.len()");
        e.iter_mut().for_each(|x| *x /= r);
        basis.push(e);
    }
}

fn first_nonzero_negative(m: &Matrix, c: usize) -> bool {
    for r in 0..m.rows() {
        let x = m[(r, c)];
        if x.abs() > 1e-14 {
            return x < 0.0;
        }
    }
    false
}

fn normalize_signs(f: &mut SvdFactors) {
    let k = f.s.len();
    for c in 0..f.u.cols() {
        if first_nonzero_negative(&f.u, c) {
            f.u.negate_col(c);
            if c < k {
                f.v.negate_col(c);
            }
        }
    }
    for c in k..f.v.cols() {
        if first_nonzero_negative(&f.v, c) {
            f.v.negate_col(c);
        }
    }
}

/// Eigendecomposition of a symmetric matrix, `S = W diag(values) W^T`,
/// with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `W diag(f(values)) W^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let g = f(lam);
            for i in 0..n {
                let wi = self.vectors[(i, k)] * g;
                for j in 0..n {
                    out[(i, j)] += wi * self.vectors[(j, k)];
                }
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in (i + 1)..n {
                let a = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = a;
                out[(j, i)] = a;
            }
        }
        out
    }
}

fn check_symmetric(s: &Matrix, op: &'static str) -> Result<()> {
    if !s.is_square() {
        return Err(Error::NotSquare {
            op,
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    let tol = 1e-10 * s.max_abs().max(1.0);
    let n = s.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (s[(i, j)] - s[(j, i)]).abs() > tol {
                return Err(Error::NotSpd {
                    reason: "matrix is not symmetric",
                });
            }
        }
    }
    Ok(())
}

/// Cyclic two-sided Jacobi eigensolver for symmetric matrices.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(s, "symmetric_eigen")?;
    let n = s.rows();
    let mut a = sym(s)?;
    let mut w = Matrix::identity(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.as_slice().iter().map(|x| x * x).sum();
        if off <= f64::EPSILON * f64::EPSILON * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let sn = t * c;
                // A <- J^T A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = c * wkp - sn * wkq;
                    w[(k, q)] = sn * wkp + c * wkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "Jacobi eigensolver",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, c| w[(r, order[c])]);
    for c in 0..n {
        if first_nonzero_negative(&vectors, c) {
            vectors.negate_col(c);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Matrix logarithm of an SPD matrix via its eigendecomposition.
pub fn spd_log_oracle(s: &Matrix) -> Result<Matrix> {
    let eig = symmetric_eigen(s)?;
    if eig.values.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotSpd {
            reason: "non-positive eigenvalue",
        });
    }
    Ok(eig.map(libm::log))
}

/// Matrix exponential of a symmetric matrix via its eigendecomposition.
pub fn sym_exp(s: &Matrix) -> Result<Matrix> {
    Ok(symmetric_eigen(s)?.map(libm::exp))
}
