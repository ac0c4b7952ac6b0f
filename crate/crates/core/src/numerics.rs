//! Small dense linear algebra used throughout the crate.
//!
//! Everything here works on plain `f64` buffers in row-major order. Sizes are
//! small (a few hundred at most), so the routines favour fixed evaluation order
//! and determinism over speed.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot threshold for triangular solves.
pub const PIVOT_TOL: f64 = 1e-14;
/// Off-diagonal Frobenius tolerance (relative to the full Frobenius norm) for Jacobi sweeps.
pub const JACOBI_TOL: f64 = 1e-12;
/// Sweep budget for cyclic Jacobi.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues of a Gram matrix below this fraction of the largest are treated as zero.
pub const PINV_TRUNCATION: f64 = 1e-12;
/// Smallest singular value, relative to the largest, before a matrix counts as singular.
pub const SINGULAR_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("diagonal entry {index} is numerically zero")]
    ZeroDiagonal { index: usize },
    #[error("matrix is numerically singular (sigma_min/sigma_max = {ratio:e})")]
    Singular { ratio: f64 },
    #[error("spectral radius needs a symmetric or triangular matrix")]
    Unsupported,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Inner product, summed left to right.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |acc: f64, (x, y)| acc.max((x - y).abs()))
}

/// A row vector. Weights, coefficients and label vectors are all rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowVector(Vec<f64>);

impl RowVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * other`, in place.
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += alpha * o;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        debug_assert_eq!(self.0.len(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    /// Row-vector times matrix: `self · m`.
    pub fn mul_mat(&self, m: &Matrix) -> Result<Self> {
        if self.dim() != m.rows() {
            return Err(NumericsError::DimensionMismatch {
                expected: format!("row vector of length {}", m.rows()),
                actual: format!("length {}", self.dim()),
            });
        }
        let mut out = vec![0.0; m.cols()];
        for (i, &a) in self.0.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(m.row(i)) {
                *o += a * v;
            }
        }
        Ok(Self(out))
    }
}

impl Deref for RowVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RowVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for RowVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl FromIterator<f64> for RowVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = NumericsError;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.entries)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: format!("{} entries for {rows}x{cols}", rows * cols),
                actual: format!("{} entries", entries.len()),
            });
        }
        if let Some(idx) = entries.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(idx));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Builds from nested rows; panics on ragged input. Meant for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            entries.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            entries,
        }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.as_ref().len(), rows, "column length mismatch");
            for (i, &v) in c.as_ref().iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch {
                expected: format!("{} rows on the right operand", self.cols),
                actual: format!("{} rows", other.rows),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix times column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: format!("vector of length {}", self.cols),
                actual: format!("length {}", v.len()),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `A Aᵀ`, with each entry an explicit row inner product so the result is exactly symmetric.
    pub fn gram_rows(&self) -> Self {
        let mut g = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `I - alpha * self`.
    pub fn identity_minus(&self, alpha: f64) -> Result<Self> {
        if !self.is_square() {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut m = self.clone();
        for v in &mut m.entries {
            *v *= -alpha;
        }
        for i in 0..self.rows {
            m[(i, i)] += 1.0;
        }
        Ok(m)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.entries)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs();
        (0..self.rows).all(|i| (i + 1..self.cols).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn is_upper_triangular(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == 0.0))
    }

    pub fn is_lower_triangular(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| (i + 1..self.cols).all(|j| self[(i, j)] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.entries[i * self.cols + j]
    }
}

fn require_square(m: &Matrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        })
    }
}

/// Solves `a · T = y` for upper-triangular `T` by forward substitution.
///
/// Since the unknown multiplies from the left, column `j` of `T` only involves
/// `a_1..a_j`, so the coefficients come out in increasing order.
pub fn left_triangular_solve(y: &[f64], t: &Matrix) -> Result<RowVector> {
    require_square(t)?;
    let n = t.rows();
    if y.len() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: format!("right-hand side of length {n}"),
            actual: format!("length {}", y.len()),
        });
    }
    let threshold = PIVOT_TOL * t.max_abs();
    let mut a = vec![0.0; n];
    for j in 0..n {
        let pivot = t[(j, j)];
        if pivot.abs() <= threshold || pivot == 0.0 {
            return Err(NumericsError::ZeroDiagonal { index: j });
        }
        let mut acc = y[j];
        for i in 0..j {
            acc -= a[i] * t[(i, j)];
        }
        a[j] = acc / pivot;
    }
    Ok(RowVector(a))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-decomposition. Only the upper triangle is read.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    require_square(m)?;
    let n = m.rows();
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0 || off_norm(&a) <= JACOBI_TOL * scale;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_norm(&a) <= JACOBI_TOL * scale;
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            sweeps,
            off: off_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Minimum-norm solution `w` of `w X Xᵀ = y Xᵀ` for `X` of shape d×n.
///
/// Directions of `X Xᵀ` whose eigenvalue falls below `PINV_TRUNCATION · λ_max`
/// are dropped, which pins the null-space component of `w` to zero.
pub fn min_norm_least_squares(x: &Matrix, y: &[f64]) -> Result<RowVector> {
    if y.len() != x.cols() {
        return Err(NumericsError::DimensionMismatch {
            expected: format!("{} labels", x.cols()),
            actual: format!("{} labels", y.len()),
        });
    }
    let d = x.rows();
    let gram = x.gram_rows();
    let rhs: Vec<f64> = (0..d).map(|k| dot(y, x.row(k))).collect();
    let eig = symmetric_eigen(&gram)?;
    let lambda_max = eig.values.first().copied().unwrap_or(0.0);
    let mut w = vec![0.0; d];
    if lambda_max <= 0.0 {
        return Ok(RowVector(w));
    }
    let cutoff = PINV_TRUNCATION * lambda_max;
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let v = eig.vectors.column(k);
        let coef = dot(&rhs, &v) / lambda;
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += coef * vi;
        }
    }
    Ok(RowVector(w))
}

/// Largest eigenvalue magnitude. Triangular matrices read it off the diagonal;
/// symmetric ones go through Jacobi.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    require_square(m)?;
    if m.is_upper_triangular() || m.is_lower_triangular() {
        return Ok(m.diagonal().iter().fold(0.0, |acc: f64, v| acc.max(v.abs())));
    }
    if m.is_symmetric(1e-12) {
        let eig = symmetric_eigen(m)?;
        return Ok(eig.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())));
    }
    Err(NumericsError::Unsupported)
}

/// 2-norm condition number `σ_max / σ_min`, with singular values taken from
/// the eigenvalues of `MᵀM`.
pub fn condition_number(m: &Matrix) -> Result<f64> {
    require_square(m)?;
    let mtm = m.transpose().gram_rows();
    let eig = symmetric_eigen(&mtm)?;
    let sigma_max = eig.values.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let sigma_min = eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    // Squaring through MᵀM puts a floor of roughly sqrt(dim·ε) under the
    // resolvable σ_min/σ_max, so anything below that floor counts as singular.
    let floor = (10.0 * m.rows as f64 * f64::EPSILON).sqrt().max(SINGULAR_TOL);
    if sigma_max == 0.0 || sigma_min < floor * sigma_max {
        let ratio = if sigma_max == 0.0 { 0.0 } else { sigma_min / sigma_max };
        return Err(NumericsError::Singular { ratio });
    }
    Ok(sigma_max / sigma_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn triangular_solve_hand_example() {
        let t = Matrix::from_rows(&[[1.0, 2.0], [0.0, 4.0]]);
        let a = left_triangular_solve(&[2.0, 2.0], &t).unwrap();
        assert_eq!(a.as_slice(), &[2.0, -0.5]);
        let back = a.mul_mat(&t).unwrap();
        assert!(max_abs_diff(&back, &[2.0, 2.0]) < 1e-15);
    }

    #[test]
    fn triangular_solve_trivial_cases() {
        let t = Matrix::from_rows(&[[3.0, 1.0, -2.0], [0.0, 2.0, 5.0], [0.0, 0.0, 7.0]]);
        let a = left_triangular_solve(&[0.0; 3], &t).unwrap();
        assert_eq!(a.as_slice(), &[0.0; 3]);

        let a = left_triangular_solve(&[5.0], &Matrix::from_rows(&[[5.0]])).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
    }

    #[test]
    fn triangular_solve_rejects_zero_pivot() {
        let t = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1e-20]]);
        assert_eq!(
            left_triangular_solve(&[1.0, 1.0], &t),
            Err(NumericsError::ZeroDiagonal { index: 1 })
        );
        let bad = left_triangular_solve(&[1.0], &t);
        assert!(matches!(bad, Err(NumericsError::DimensionMismatch { .. })));
    }

    #[test]
    fn min_norm_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let w = min_norm_least_squares(&x, &[2.0, 2.0]).unwrap();
        assert!(close(w[0], 1.2, 1e-14));

        let w = min_norm_least_squares(&x, &[0.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.0]);

        let x = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]);
        let w = min_norm_least_squares(&x, &[1.0, 1.0]).unwrap();
        assert!(close(w[0], 1.0, 1e-14));
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&Matrix::identity(3)).unwrap(), 1.0);
        assert_eq!(spectral_radius(&Matrix::diag(&[2.0, 3.0])).unwrap(), 3.0);
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!(close(spectral_radius(&m).unwrap(), 3.0, 1e-12));
        let upper = Matrix::from_rows(&[[0.5, 9.0], [0.0, -0.75]]);
        assert_eq!(spectral_radius(&upper).unwrap(), 0.75);
        let general = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(spectral_radius(&general), Err(NumericsError::Unsupported));
    }

    #[test]
    fn condition_number_examples() {
        assert!(close(condition_number(&Matrix::identity(4)).unwrap(), 1.0, 1e-14));
        assert!(close(condition_number(&Matrix::diag(&[4.0, 1.0])).unwrap(), 4.0, 1e-12));
        // eigenvalues of MᵀM are (21 ± √377)/2
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 4.0]]);
        let s = 377f64.sqrt();
        let expected = ((21.0 + s) / (21.0 - s)).sqrt();
        let kappa = condition_number(&m).unwrap();
        assert!(close(kappa, expected, 1e-10));
        assert!(close(kappa, 5.05, 0.01));
    }

    #[test]
    fn condition_number_rejects_singular() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(condition_number(&m), Err(NumericsError::Singular { .. })));
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = Matrix::from_rows(&[[4.0, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]]);
        let eig = symmetric_eigen(&m).unwrap();
        let lambda = Matrix::diag(&eig.values);
        let rebuilt = eig
            .vectors
            .matmul(&lambda)
            .unwrap()
            .matmul(&eig.vectors.transpose())
            .unwrap();
        assert!(max_abs_diff(rebuilt.entries(), m.entries()) < 1e-12);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn matrix_rejects_bad_shapes() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(NumericsError::DimensionMismatch { .. })
        ));
        assert_eq!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(NumericsError::NonFinite(1)));
    }
}
