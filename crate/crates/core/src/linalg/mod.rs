//! Dense complex linear algebra.
//!
//! [`CMatrix`] stores entries column-major, which makes [`CMatrix::vec`] a
//! copy of the backing buffer and keeps the identity
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)` consistent with [`CMatrix::kron`].

mod svd;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

pub use svd::{Svd, MAX_SWEEPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("cannot reshape {len} entries into {rows}x{cols}")]
    Length { len: usize, rows: usize, cols: usize },
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Dense complex matrix with column-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    /// Wraps a column-major buffer.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Length {
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(d: &[Complex64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &z) in d.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; handy for literals in tests.
    pub fn from_rows(rows: &[&[Complex64]]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(LinalgError::Shape {
                op: "from_rows",
                lhs: (r, c),
                rhs: (1, bad.len()),
            });
        }
        if r == 0 || c == 0 {
            return Err(LinalgError::Empty { rows: r, cols: c });
        }
        Ok(Self::from_fn(r, c, |i, j| rows[i][j]))
    }

    /// Real matrix from row-major values.
    pub fn from_real_rows(rows: usize, cols: usize, values: &[f64]) -> Result<Self, LinalgError> {
        if values.len() != rows * cols {
            return Err(LinalgError::Length {
                len: values.len(),
                rows,
                cols,
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| {
            Complex64::new(values[i * cols + j], 0.0)
        }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Column-major view of the entries.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Column-wise vectorization: element `k·rows + i` is `A[i, k]`.
    pub fn vec(&self) -> Vec<Complex64> {
        self.data.clone()
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    /// Inverse of [`CMatrix::vec`].
    pub fn ivec(v: &[Complex64], rows: usize, cols: usize) -> Result<Self, LinalgError> {
        Self::new(rows, cols, v.to_vec())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        self.map(|z| z * alpha)
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(self.column(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>, LinalgError> {
        if self.cols != x.len() {
            return Err(LinalgError::Shape {
                op: "mul_vec",
                lhs: self.shape(),
                rhs: (x.len(), 1),
            });
        }
        let mut y = vec![Complex64::new(0.0, 0.0); self.rows];
        for (k, &xk) in x.iter().enumerate() {
            for (yi, &a) in y.iter_mut().zip(self.column(k)) {
                *yi += a * xk;
            }
        }
        Ok(y)
    }

    /// Kronecker product: block `(i, j)` of the result is `self[i, j] · other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (ra, ca) = self.shape();
        let (rb, cb) = other.shape();
        Self::from_fn(ra * rb, ca * cb, |i, j| {
            self[(i / rb, j / cb)] * other[(i % rb, j % cb)]
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.norm_sqr())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Thin SVD, `self = U · diag(s) · Vᴴ` with `s` sorted descending.
    pub fn svd(&self) -> Result<Svd, LinalgError> {
        svd::jacobi_svd(self)
    }

    /// Moore–Penrose pseudoinverse with the default cutoff
    /// `max(rows, cols) · ε · σ_max`.
    pub fn pinv(&self) -> Result<Self, LinalgError> {
        self.pinv_with_tol(self.rows.max(self.cols) as f64 * f64::EPSILON)
    }

    /// Pseudoinverse zeroing singular values `≤ tol · σ_max`.
    pub fn pinv_with_tol(&self, tol: f64) -> Result<Self, LinalgError> {
        let svd = self.svd()?;
        Ok(svd.pseudo_inverse(tol))
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut r = rng::stream(seed);
        CMatrix::from_fn(rows, cols, |_, _| {
            c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        })
    }

    fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn vec_is_column_major() {
        let a = CMatrix::from_rows(&[&[c(1., 0.), c(3., 0.)], &[c(2., 0.), c(4., 0.)]]).unwrap();
        assert_eq!(a.vec(), vec![c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)]);
        let z = c(0.3, -2.0);
        assert_eq!(CMatrix::from_rows(&[&[z]]).unwrap().vec(), vec![z]);
    }

    #[test]
    fn ivec_inverts_vec() {
        let v = [c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)];
        let a = CMatrix::ivec(&v, 2, 2).unwrap();
        assert_eq!(a[(0, 1)], c(3., 0.));
        assert_eq!(a[(1, 0)], c(2., 0.));
        let z = c(-1.5, 0.25);
        assert_eq!(CMatrix::ivec(&[z], 1, 1).unwrap()[(0, 0)], z);
        for seed in 0..50 {
            let a = random(1 + seed as usize % 5, 1 + seed as usize % 3, seed);
            assert_eq!(CMatrix::ivec(&a.vec(), a.rows(), a.cols()).unwrap(), a);
        }
    }

    #[test]
    fn ivec_rejects_bad_length() {
        assert!(matches!(
            CMatrix::ivec(&[c(1., 0.); 5], 2, 3),
            Err(LinalgError::Length { len: 5, rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn kron_identity_and_scalar() {
        assert_eq!(CMatrix::identity(2).kron(&CMatrix::identity(2)), CMatrix::identity(4));
        let b = random(2, 3, 9);
        let two = CMatrix::from_rows(&[&[c(2., 0.)]]).unwrap();
        assert_eq!(two.kron(&b), b.scale(c(2., 0.)));
    }

    #[test]
    fn kron_matches_vectorized_triple_product() {
        // vec(Wᴴ H G) = (Gᵀ ⊗ Wᴴ) vec(H), checked by direct multiplication.
        for seed in 0..10 {
            let wh = random(3, 2, 100 + seed);
            let h = random(2, 2, 200 + seed);
            let g = random(2, 3, 300 + seed);
            let direct = wh.matmul(&h).unwrap().matmul(&g).unwrap().vec();
            let via_kron = g.transpose().kron(&wh).mul_vec(&h.vec()).unwrap();
            let num: f64 = direct.iter().zip(&via_kron).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = direct.iter().map(|a| a.norm_sqr()).sum();
            assert!(libm::sqrt(num / den) < 1e-12);
        }
    }

    #[test]
    fn kron_is_bilinear() {
        let a = random(2, 3, 1);
        let b = random(3, 2, 2);
        let alpha = c(0.7, -1.3);
        assert!(rel_err(&a.scale(alpha).kron(&b), &a.kron(&b).scale(alpha)) < 1e-14);
        assert!(rel_err(&a.kron(&b.scale(alpha)), &a.kron(&b).scale(alpha)) < 1e-14);
    }

    #[test]
    fn matmul_shape_error() {
        let a = random(2, 3, 1);
        assert!(matches!(a.matmul(&a), Err(LinalgError::Shape { op: "matmul", .. })));
    }

    #[test]
    fn new_rejects_empty() {
        assert!(matches!(CMatrix::new(0, 3, vec![]), Err(LinalgError::Empty { .. })));
    }
}
