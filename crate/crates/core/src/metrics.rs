//! Estimation error and rank correlation.

use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::CMatrix;

pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("reference channel is zero")]
    ZeroReference,
    #[error("need at least two points of equal-length series")]
    Series,
}

/// `10·log10(‖Ĥ − H‖²_F / ‖H‖²_F)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(estimate: &CMatrix, truth: &CMatrix) -> Result<f64, MetricError> {
    if estimate.shape() != truth.shape() {
        return Err(MetricError::Shape(estimate.shape(), truth.shape()));
    }
    let denom = truth.norm_sqr();
    if denom == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let num: f64 = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok((10.0 * libm::log10(num / denom)).max(NMSE_FLOOR_DB))
}

/// Ranks with ties sharing their mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
/// A constant series has correlation 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricError::Series);
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn h() -> CMatrix {
        CMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 1.0, j as f64 - 0.5))
    }

    #[test]
    fn nmse_reference_values() {
        let h = h();
        assert_eq!(nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
        assert_eq!(nmse_db(&CMatrix::zeros(3, 2), &h).unwrap(), 0.0);
        let two = h.scale(Complex64::new(2.0, 0.0));
        assert!(nmse_db(&two, &h).unwrap().abs() < 1e-12);
        let tenth = h.scale(Complex64::new(1.1, 0.0));
        assert!((nmse_db(&tenth, &h).unwrap() + 20.0).abs() < 1e-9);
    }

    #[test]
    fn nmse_errors() {
        let h = h();
        assert_eq!(nmse_db(&h, &CMatrix::zeros(3, 2)), Err(MetricError::ZeroReference));
        assert!(matches!(nmse_db(&h, &CMatrix::zeros(2, 3)), Err(MetricError::Shape(..))));
    }

    #[test]
    fn spearman_values() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&t, &[1.0, 4.0, 9.0, 16.0, 25.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&t, &[5.0, 3.0, 2.0, 1.0, -7.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&t, &[2.0; 5]).unwrap(), 0.0);
        // Hand-ranked: x ranks [0,1,2,3], y ranks [1,0,3,2]; ρ = 1 - 6·4/(4·15) = 0.6.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(spearman(&[1.0], &[1.0]), Err(MetricError::Series));
    }

    #[test]
    fn ties_share_mean_rank() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), alloc::vec![2.5, 0.0, 2.5, 1.0]);
    }
}
