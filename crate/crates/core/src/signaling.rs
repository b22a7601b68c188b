//! Pilot observations and the least-squares baseline.
//!
//! The base station observes `Y = Wᴴ H G + N` with analog combiner `W`
//! (`N_B × M_B`), precoder `F` (`N_U × M_U`), diagonal pilot symbols `S` and
//! `G = F S`. Vectorizing gives `vec(Y) = (Gᵀ ⊗ Wᴴ) vec(H) + vec(N)`; the
//! baseline estimate is the minimum-norm least-squares solution through the
//! pseudoinverse of that Kronecker operator.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalingError {
    #[error("pilot dimensions must all be >= 1")]
    ZeroDimension,
    #[error("channel is {got:?}, pilots expect {expected:?}")]
    ChannelShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("observation is {got:?}, pilots expect {expected:?}")]
    ObservationShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("noise variance must be finite and >= 0")]
    InvalidVariance,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Fixed combiner, precoder and pilot symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    pub w: CMatrix,
    pub f: CMatrix,
    pub s: CMatrix,
    pub g: CMatrix,
    pub rng_seed: u64,
}

impl PilotConfig {
    pub fn nb(&self) -> usize {
        self.w.rows()
    }

    pub fn nu(&self) -> usize {
        self.f.rows()
    }

    pub fn mb(&self) -> usize {
        self.w.cols()
    }

    pub fn mu(&self) -> usize {
        self.f.cols()
    }

    /// Number of scalar observations per coherence interval, `M_B · M_U`.
    pub fn overhead(&self) -> usize {
        self.mb() * self.mu()
    }

    /// The observation operator `Gᵀ ⊗ Wᴴ` acting on `vec(H)`.
    pub fn operator(&self) -> CMatrix {
        self.g.transpose().kron(&self.w.adjoint())
    }

    fn check_channel(&self, h: &CMatrix) -> Result<(), SignalingError> {
        let expected = (self.nb(), self.nu());
        if h.shape() != expected {
            return Err(SignalingError::ChannelShape {
                got: h.shape(),
                expected,
            });
        }
        Ok(())
    }
}

/// Unit-amplitude pilots; see [`make_pilots_with_amplitude`].
pub fn make_pilots(
    nb: usize,
    nu: usize,
    mb: usize,
    mu: usize,
    seed: u64,
) -> Result<PilotConfig, SignalingError> {
    make_pilots_with_amplitude(nb, nu, mb, mu, 1.0, seed)
}

/// Random-phase `W` and `F` (phases uniform on `[0, 2π)`) and
/// `S = amplitude · I`.
pub fn make_pilots_with_amplitude(
    nb: usize,
    nu: usize,
    mb: usize,
    mu: usize,
    amplitude: f64,
    seed: u64,
) -> Result<PilotConfig, SignalingError> {
    if nb == 0 || nu == 0 || mb == 0 || mu == 0 {
        return Err(SignalingError::ZeroDimension);
    }
    let mut r = rng::stream(seed);
    let mut phase = |_, _| Complex64::from_polar(1.0, r.random_range(0.0..2.0 * PI));
    let w = CMatrix::from_fn(nb, mb, &mut phase);
    let f = CMatrix::from_fn(nu, mu, &mut phase);
    let s = CMatrix::from_diag(&alloc::vec![Complex64::new(amplitude, 0.0); mu]);
    let g = f.matmul(&s)?;
    Ok(PilotConfig {
        w,
        f,
        s,
        g,
        rng_seed: seed,
    })
}

/// Per-entry complex noise variance and the seed of its stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, rng_seed: u64) -> Result<Self, SignalingError> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(SignalingError::InvalidVariance);
        }
        Ok(Self { variance, rng_seed })
    }

    /// Variance giving `snr_db` relative to a per-entry signal power.
    pub fn from_snr(snr_db: f64, signal_power: f64, rng_seed: u64) -> Result<Self, SignalingError> {
        Self::new(signal_power / libm::pow(10.0, snr_db / 10.0), rng_seed)
    }
}

/// Mean per-entry power of the noiseless observation `Wᴴ H G` over `channels`.
pub fn mean_signal_power<'a>(
    cfg: &PilotConfig,
    channels: impl IntoIterator<Item = &'a CMatrix>,
) -> Result<f64, SignalingError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for h in channels {
        total += noiseless(h, cfg)?.norm_sqr();
        n += 1;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(total / (n * cfg.overhead()) as f64)
}

fn noiseless(h: &CMatrix, cfg: &PilotConfig) -> Result<CMatrix, SignalingError> {
    cfg.check_channel(h)?;
    Ok(cfg.w.adjoint().matmul(h)?.matmul(&cfg.g)?)
}

/// `Wᴴ H G + N` with noise drawn from the stream seeded by `noise.rng_seed`.
pub fn observe(h: &CMatrix, cfg: &PilotConfig, noise: &NoiseSpec) -> Result<CMatrix, SignalingError> {
    let mut r = rng::stream(noise.rng_seed);
    observe_with(h, cfg, noise.variance, &mut r)
}

/// [`observe`] drawing noise from a caller-owned stream, for sequences of
/// observations.
pub fn observe_with<R: Rng + ?Sized>(
    h: &CMatrix,
    cfg: &PilotConfig,
    variance: f64,
    rng: &mut R,
) -> Result<CMatrix, SignalingError> {
    if !variance.is_finite() || variance < 0.0 {
        return Err(SignalingError::InvalidVariance);
    }
    let mut y = noiseless(h, cfg)?;
    if variance > 0.0 {
        for z in y.as_mut_slice() {
            *z += rng::complex_normal(rng, variance);
        }
    }
    Ok(y)
}

/// `[Re(vec(Y)); Im(vec(Y))]`.
pub fn flatten_observation(y: &CMatrix) -> Vec<f64> {
    let v = y.as_slice();
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

/// Inverse of [`flatten_observation`].
pub fn unflatten_observation(y: &[f64], rows: usize, cols: usize) -> Result<CMatrix, SignalingError> {
    let n = rows * cols;
    if y.len() != 2 * n {
        return Err(LinalgError::Length {
            len: y.len(),
            rows: 2 * rows,
            cols,
        }
        .into());
    }
    let data = (0..n).map(|i| Complex64::new(y[i], y[n + i])).collect();
    Ok(CMatrix::new(rows, cols, data)?)
}

/// Minimum-norm LS estimator with the operator pseudoinverse computed once.
#[derive(Debug, Clone)]
pub struct LsEstimator {
    pinv: CMatrix,
    channel_shape: (usize, usize),
    obs_shape: (usize, usize),
}

impl LsEstimator {
    pub fn new(cfg: &PilotConfig) -> Result<Self, SignalingError> {
        Ok(Self {
            pinv: cfg.operator().pinv()?,
            channel_shape: (cfg.nb(), cfg.nu()),
            obs_shape: (cfg.mb(), cfg.mu()),
        })
    }

    pub fn estimate(&self, y: &CMatrix) -> Result<CMatrix, SignalingError> {
        if y.shape() != self.obs_shape {
            return Err(SignalingError::ObservationShape {
                got: y.shape(),
                expected: self.obs_shape,
            });
        }
        let v = self.pinv.mul_vec(y.as_slice())?;
        Ok(CMatrix::ivec(&v, self.channel_shape.0, self.channel_shape.1)?)
    }
}

/// One-shot `vec(Ĥ) = (Gᵀ ⊗ Wᴴ)† vec(Y)`.
pub fn ls_estimate(y: &CMatrix, cfg: &PilotConfig) -> Result<CMatrix, SignalingError> {
    LsEstimator::new(cfg)?.estimate(y)
}
