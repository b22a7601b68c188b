//! One-sided (Hestenes) Jacobi SVD for complex matrices.
//!
//! Columns of a working copy are rotated pairwise until mutually orthogonal;
//! the accumulated rotations form `V`, column norms are the singular values
//! and the normalized columns form `U`. Accuracy is relative to each
//! singular value, which suits the small, possibly rank-deficient operators
//! used for least-squares estimation.

use alloc::vec::Vec;

use num_complex::Complex64;

use super::{CMatrix, LinalgError};

pub const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U · diag(s) · Vᴴ`, `k = min(rows, cols)`.
///
/// Columns of `u` paired with a zero singular value are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn rank(&self, tol: f64) -> usize {
        let cutoff = tol * self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&x| x > cutoff).count()
    }

    /// `V · diag(1/s) · Uᴴ` over singular values above `tol · σ_max`.
    pub fn pseudo_inverse(&self, tol: f64) -> CMatrix {
        let m = self.u.rows();
        let n = self.v.rows();
        let cutoff = tol * self.s.first().copied().unwrap_or(0.0);
        let mut out = CMatrix::zeros(n, m);
        for (k, &sigma) in self.s.iter().enumerate() {
            if sigma <= cutoff || sigma == 0.0 {
                continue;
            }
            let inv = 1.0 / sigma;
            let uk = self.u.column(k);
            let vk = self.v.column(k);
            for (j, &u) in uk.iter().enumerate() {
                let coef = u.conj() * inv;
                for (i, &v) in vk.iter().enumerate() {
                    out[(i, j)] += v * coef;
                }
            }
        }
        out
    }
}

pub(super) fn jacobi_svd(a: &CMatrix) -> Result<Svd, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if a.rows() < a.cols() {
        let t = tall_svd(a.adjoint())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    tall_svd(a.clone())
}

fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Rotates columns `p < q` of a column-major buffer.
fn rotate(data: &mut [Complex64], rows: usize, p: usize, q: usize, c: f64, s: f64, phase: Complex64) {
    let (head, tail) = data.split_at_mut(q * rows);
    let col_p = &mut head[p * rows..(p + 1) * rows];
    let col_q = &mut tail[..rows];
    for (x, y) in col_p.iter_mut().zip(col_q.iter_mut()) {
        let yq = *y * phase;
        let xp = *x;
        *x = xp * c - yq * s;
        *y = xp * s + yq * c;
    }
}

fn tall_svd(mut work: CMatrix) -> Result<Svd, LinalgError> {
    let m = work.rows();
    let n = work.cols();
    let mut v = CMatrix::identity(n);
    let eps = f64::EPSILON;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norm_sqr(work.column(p));
                let beta = norm_sqr(work.column(q));
                let gamma = dot(work.column(p), work.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= eps * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                // Align the phase of column q so the pair's inner product is real,
                // then apply the real Jacobi rotation that zeroes it.
                let phase = gamma.conj() / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(work.as_mut_slice(), m, p, q, c, s, phase);
                rotate(v.as_mut_slice(), n, p, q, c, s, phase);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut sigma: Vec<(usize, f64)> = (0..n)
        .map(|j| (j, libm::sqrt(norm_sqr(work.column(j)))))
        .collect();
    sigma.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut u = CMatrix::zeros(m, n);
    let mut vs = CMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(j, sj)) in sigma.iter().enumerate() {
        s.push(sj);
        if sj > 0.0 {
            for i in 0..m {
                u[(i, k)] = work[(i, j)] / sj;
            }
        }
        for i in 0..n {
            vs[(i, k)] = v[(i, j)];
        }
    }
    Ok(Svd { u, s, v: vs })
}
