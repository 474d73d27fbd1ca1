//! Dense symmetric linear algebra: covariance estimation and a cyclic Jacobi
//! eigensolver.
//!
//! Everything here is a pure function of its inputs. The eigensolver performs a
//! fixed sequence of floating point operations for a given matrix, so results are
//! bit-identical across runs and threads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum number of full Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 100;

/// Largest dimension accepted by [`sym_eigen`].
pub const MAX_EIGEN_DIM: usize = 4096;

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyInput("matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from `f(row, col)`. Panics if `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                data.push(v);
            }
        }
        Matrix { rows, cols, data }
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionInconsistent { row: i, expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(n, cols, data)
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
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// Sets one entry. Panics on a non-finite value.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, found: other.rows });
        }
        let mut out = vec![T::zero(); self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                let orow = other.row(k);
                let dst = &mut out[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Matrix::new(self.rows, other.cols, out)
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossless())).collect(),
        }
    }
}

/// Symmetric matrix storing only the upper triangle (row-major packed).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    upper: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    /// Builds from `f(i, j)` evaluated on the upper triangle `i <= j`.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyInput("symmetric matrix"));
        }
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite("symmetric matrix"));
                }
                upper.push(v);
            }
        }
        Ok(SymMatrix { dim, upper })
    }

    /// Reads the upper triangle of a square matrix; the lower triangle is ignored.
    pub fn from_dense_upper(m: &Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::ShapeMismatch(format!("{}x{} is not square", m.rows(), m.cols())));
        }
        Self::from_upper(m.rows(), |i, j| m.get(i, j))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_upper(dim, |i, j| if i == j { T::one() } else { T::zero() })
            .expect("identity dimension must be positive")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.upper[row_offset(self.dim, i) + (j - i)]
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s.sqrt()
    }
}

/// Offset of row `i` in the packed upper triangle: `sum_{r<i} (dim - r)`.
#[inline]
fn row_offset(dim: usize, i: usize) -> usize {
    i * dim - i * i.saturating_sub(1) / 2
}

/// Sample covariance of the columns of `x` (`P x n`, one sample per column).
///
/// Uncentered: `(1/n) X Xᵀ`. Centered: the mean sample is subtracted first.
pub fn covariance<T: Scalar>(x: &Matrix<T>, centered: bool) -> Result<SymMatrix<T>> {
    covariance_of_rows(&x.transpose(), centered)
}

/// Same as [`covariance`] for the `n x P` layout with one sample per row.
pub fn covariance_of_rows<T: Scalar>(samples: &Matrix<T>, centered: bool) -> Result<SymMatrix<T>> {
    let rows: Vec<&[T]> = (0..samples.rows()).map(|i| samples.row(i)).collect();
    covariance_of_slices(&rows, samples.cols(), centered)
}

pub(crate) fn covariance_of_slices<T: Scalar>(
    rows: &[&[T]],
    dim: usize,
    centered: bool,
) -> Result<SymMatrix<T>> {
    let n = rows.len();
    if n == 0 || dim == 0 {
        return Err(Error::EmptyInput("covariance samples"));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("covariance samples"));
    }
    let inv_n = T::one() / T::from_usize(n).expect("sample count fits the scalar type");
    let mean: Vec<T> = if centered {
        (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<T>() * inv_n).collect()
    } else {
        vec![T::zero(); dim]
    };

    let mut acc = vec![T::zero(); dim * (dim + 1) / 2];
    let mut buf = vec![T::zero(); dim];
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
        }
        for (b, (&v, &m)) in buf.iter_mut().zip(r.iter().zip(&mean)) {
            *b = v - m;
        }
        let mut k = 0;
        for i in 0..dim {
            let bi = buf[i];
            for &bj in &buf[i..] {
                acc[k] += bi * bj;
                k += 1;
            }
        }
    }
    for v in &mut acc {
        *v *= inv_n;
    }
    Ok(SymMatrix { dim, upper: acc })
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
///
/// Row `i` of [`EigenDecomposition::vectors`] holds the eigenvector of `values()[i]`,
/// sign-normalised so that its largest-magnitude component (lowest index on ties) is
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition<T> {
    values: Vec<T>,
    vectors: Matrix<T>,
}

impl<T: Scalar> EigenDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Eigenvectors stored row-wise.
    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[T] {
        self.vectors.row(i)
    }

    /// `Ξ Λ Ξᵀ` as a dense matrix.
    pub fn reconstruct(&self) -> Matrix<T> {
        let p = self.dim();
        Matrix::from_fn(p, p, |i, j| {
            (0..p).map(|k| self.vectors.get(k, i) * self.values[k] * self.vectors.get(k, j)).sum()
        })
    }

    /// Snaps eigenvalues with `|λ| <= eps` to exactly zero. Order is preserved.
    pub fn clamp_near_zero(mut self, eps: T) -> Self {
        for v in &mut self.values {
            if v.abs() <= eps {
                *v = T::zero();
            }
        }
        self
    }

    /// Builds a decomposition from explicit parts, checking shape and ordering.
    /// The vectors are taken as given; no orthonormality or sign check is made.
    pub fn from_parts(values: Vec<T>, vectors: Matrix<T>) -> Result<Self> {
        let p = values.len();
        if vectors.rows() != p || vectors.cols() != p {
            return Err(Error::ShapeMismatch(format!(
                "{} eigenvalues with {}x{} eigenvectors",
                p,
                vectors.rows(),
                vectors.cols()
            )));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::config("eigenvalues must be in descending order"));
        }
        Ok(EigenDecomposition { values, vectors })
    }
}

/// Flips `v` so its largest-magnitude component is positive (first index wins ties).
pub fn canonical_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < T::zero() {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `Scalar::jacobi_tolerance() * ‖S‖_F` (1e-12 for `f64`).
pub fn sym_eigen<T: Scalar>(s: &SymMatrix<T>) -> Result<EigenDecomposition<T>> {
    let n = s.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::OutOfDomain {
            name: "dim",
            value: n as f64,
            domain: "1..=4096",
        });
    }
    let mut a = s.to_dense().into_vec();
    // v holds eigenvectors as columns while iterating.
    let mut v = Matrix::<T>::identity(n).into_vec();

    let norm = s.frobenius_norm();
    let threshold = T::jacobi_tolerance() * norm;
    let off = |a: &[T]| -> T {
        let mut acc = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
        (acc + acc).sqrt()
    };

    let two = T::lit(2.0);
    let mut converged = off(&a) <= threshold;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { dim: n, residual: off(&a).to_f64_lossless() });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Rutishauser's stable rotation: t = sgn(θ) / (|θ| + sqrt(θ² + 1)).
                let theta = (aqq - app) / (two * apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (two * theta)
                } else {
                    let t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = T::zero();
                a[q * n + p] = T::zero();

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
        converged = off(&a) <= threshold;
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Descending; equal eigenvalues keep their original index order.
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });

    let values: Vec<T> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut rows = Vec::with_capacity(n * n);
    for &col in &order {
        let mut vec: Vec<T> = (0..n).map(|k| v[k * n + col]).collect();
        canonical_sign(&mut vec);
        rows.extend(vec);
    }
    let vectors = Matrix::new(n, n, rows).map_err(|_| Error::NonFinite("eigenvectors"))?;
    Ok(EigenDecomposition { values, vectors })
}
