//! Small neural-network toolkit with hand-written backward passes.
//!
//! Batches are row-major `batch × width` buffers. Every model implements
//! [`Parameters`], which exposes its tensors in a fixed order; gradients are
//! stored in a value of the same model type so optimizers and checkpoints
//! can treat models and gradients uniformly.

mod adam;
mod gradcheck;
mod lstm;
mod mlp;

use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use adam::Adam;
pub use gradcheck::grad_check;
pub use lstm::{LstmStack, LstmState, LstmTape};
pub use mlp::{Activation, Dense, Mlp, MlpTape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("layer widths do not chain: {0}")]
    Architecture(&'static str),
    #[error("tape does not belong to the current parameters")]
    StaleTape,
    #[error("parameter layout mismatch")]
    ShapeMismatch,
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected != got {
        return Err(NnError::Length { what, expected, got });
    }
    Ok(())
}

static VERSION: AtomicU64 = AtomicU64::new(1);

/// Fresh parameter version; a tape is only valid for the version it saw.
pub(crate) fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A named, shaped view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRef<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

/// Ordered access to a model's parameter tensors.
///
/// `tensors` and `tensors_mut` must list the same tensors in the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        check_len("flat parameters", self.num_params(), flat.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// FNV-1a over the parameter bit patterns.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for x in t.data {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Tensor names prefixed with `prefix` followed by a dot.
pub fn prefixed<'a>(prefix: &str, tensors: Vec<TensorRef<'a>>) -> impl Iterator<Item = TensorRef<'a>> + 'a {
    let p = alloc::format!("{prefix}.");
    tensors.into_iter().map(move |mut t| {
        t.name.insert_str(0, &p);
        t
    })
}

/// `c = a·b + beta·c` with `a` of size `m × k`, `b` of size `k × n` given by
/// element strides, and `c` row-major `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        for x in &mut c[..m * n] {
            *x *= beta;
        }
        return;
    }
    assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m×n) = x (m×k) · wᵀ` where `w` is row-major `n × k`.
pub(crate) fn matmul_nt(m: usize, k: usize, n: usize, x: &[f64], w: &[f64], beta: f64, c: &mut [f64]) {
    gemm(m, k, n, x, (k, 1), w, (1, k), beta, c);
}

/// `c (m×k) = dy (m×n) · w` where `w` is row-major `n × k`.
pub(crate) fn matmul_nn(m: usize, n: usize, k: usize, dy: &[f64], w: &[f64], beta: f64, c: &mut [f64]) {
    gemm(m, n, k, dy, (n, 1), w, (k, 1), beta, c);
}

/// `c (n×k) += dyᵀ · x` with `dy` row-major `m × n` and `x` row-major `m × k`.
pub(crate) fn matmul_tn_acc(m: usize, n: usize, k: usize, dy: &[f64], x: &[f64], c: &mut [f64]) {
    gemm(n, m, k, dy, (1, n), x, (k, 1), 1.0, c);
}

/// `Σ (pred − target)²` and its gradient with respect to `pred`, scaled by `scale`.
pub fn squared_error(pred: &[f64], target: &[f64], scale: f64) -> Result<(f64, Vec<f64>), NnError> {
    check_len("target", pred.len(), target.len())?;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * scale * d
        })
        .collect();
    Ok((scale * loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_match_loops() {
        let (m, k, n) = (3, 4, 2);
        let x: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let mut y = alloc::vec![0.0; m * n];
        matmul_nt(m, k, n, &x, &w, 0.0, &mut y);
        for i in 0..m {
            for j in 0..n {
                let e: f64 = (0..k).map(|p| x[i * k + p] * w[j * k + p]).sum();
                assert!((y[i * n + j] - e).abs() < 1e-12);
            }
        }
        let mut dx = alloc::vec![0.0; m * k];
        matmul_nn(m, n, k, &y, &w, 0.0, &mut dx);
        for i in 0..m {
            for p in 0..k {
                let e: f64 = (0..n).map(|j| y[i * n + j] * w[j * k + p]).sum();
                assert!((dx[i * k + p] - e).abs() < 1e-12);
            }
        }
        let mut dw = alloc::vec![1.0; n * k];
        matmul_tn_acc(m, n, k, &y, &x, &mut dw);
        for j in 0..n {
            for p in 0..k {
                let e: f64 = 1.0 + (0..m).map(|i| y[i * n + j] * x[i * k + p]).sum::<f64>();
                assert!((dw[j * k + p] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn squared_error_value_and_grad() {
        let (l, g) = squared_error(&[1.0, 3.0], &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g, alloc::vec![1.0, 2.0]);
        assert!(squared_error(&[1.0], &[], 1.0).is_err());
    }
}
