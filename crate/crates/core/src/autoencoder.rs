//! Channel autoencoder with a position-aware distance loss.
//!
//! A channel is normalized into a real vector `v = [(|H| − α)/β ; arg(H)/π]`
//! and encoded into a latent `s`. Training minimizes the reconstruction loss
//! `L_CI` (decoder applied to a perturbed latent) plus `λ·L_TC`, which matches
//! the standardized pairwise squared latent distances of a mini-batch to the
//! standardized squared distances between the users' positions. The second
//! term makes nearby positions map to nearby latents, so a smoothly moving
//! user traces a smooth latent path.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::ChannelSample;
use crate::linalg::CMatrix;
use crate::nn::{self, Adam, Mlp, MlpTape, NnError, Parameters, TensorRef};
use crate::rng;

/// Standard deviations below this are replaced by 1.
pub const STD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AeError {
    #[error("vector length {got} does not match a {rows}x{cols} channel")]
    Length { got: usize, rows: usize, cols: usize },
    #[error("distance loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("training needs at least 2 samples")]
    DatasetTooSmall,
    #[error("channel is {got:?}, model expects {expected:?}")]
    ChannelShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("invalid hyperparameter: {0}")]
    Hyper(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Normalized amplitude/phase vector and the amplitude statistics removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub v: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// True when the amplitude spread was below [`STD_GUARD`] and `beta` was
    /// replaced by 1.
    pub guarded: bool,
}

/// Mean and population standard deviation with the [`STD_GUARD`] fallback.
fn guarded_stats(x: &[f64]) -> (f64, f64, bool) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if std < STD_GUARD {
        (mean, 1.0, true)
    } else {
        (mean, std, false)
    }
}

/// Phase in `(−π, π]`.
fn phase(z: Complex64) -> f64 {
    let p = libm::atan2(z.im, z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn preprocess(h: &CMatrix) -> Preprocessed {
    let data = h.as_slice();
    let amp: Vec<f64> = data.iter().map(|z| z.norm()).collect();
    let (alpha, beta, guarded) = guarded_stats(&amp);
    let mut v = Vec::with_capacity(2 * data.len());
    v.extend(amp.iter().map(|a| (a - alpha) / beta));
    v.extend(data.iter().map(|&z| phase(z) / PI));
    Preprocessed { v, alpha, beta, guarded }
}

/// Inverse of [`preprocess`]: amplitude `β·v₁ + α`, phase `π·v₂`. Negative
/// amplitudes are passed through unchanged.
pub fn postprocess(v: &[f64], alpha: f64, beta: f64, rows: usize, cols: usize) -> Result<CMatrix, AeError> {
    let n = rows * cols;
    if v.len() != 2 * n || n == 0 {
        return Err(AeError::Length { got: v.len(), rows, cols });
    }
    let data = (0..n)
        .map(|i| {
            let a = beta * v[i] + alpha;
            let p = PI * v[n + i];
            Complex64::new(a * libm::cos(p), a * libm::sin(p))
        })
        .collect();
    Ok(CMatrix::new(rows, cols, data).expect("length checked"))
}

/// Encoder and decoder for `N_B × N_U` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    nb: usize,
    nu: usize,
}

impl AutoencoderModel {
    /// Encoder `2·N_B·N_U → enc_hidden… → latent`, decoder
    /// `latent → dec_hidden… → 2·N_B·N_U`.
    pub fn init<R: Rng + ?Sized>(
        nb: usize,
        nu: usize,
        enc_hidden: &[usize],
        latent: usize,
        dec_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, AeError> {
        let d = 2 * nb * nu;
        let mut ew = vec![d];
        ew.extend_from_slice(enc_hidden);
        ew.push(latent);
        let mut dw = vec![latent];
        dw.extend_from_slice(dec_hidden);
        dw.push(d);
        let encoder = Mlp::init(&ew, rng)?;
        let decoder = Mlp::init(&dw, rng)?;
        Self::from_parts(encoder, decoder, nb, nu)
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, nb: usize, nu: usize) -> Result<Self, AeError> {
        let d = 2 * nb * nu;
        if encoder.input_dim() != d || decoder.output_dim() != d {
            return Err(NnError::Architecture("autoencoder ends must be 2·N_B·N_U wide").into());
        }
        if encoder.output_dim() != decoder.input_dim() {
            return Err(NnError::Architecture("encoder output must equal decoder input").into());
        }
        Ok(Self { encoder, decoder, nb, nu })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            nb: self.nb,
            nu: self.nu,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn channel_shape(&self) -> (usize, usize) {
        (self.nb, self.nu)
    }

    fn check(&self, h: &CMatrix) -> Result<(), AeError> {
        if h.shape() != (self.nb, self.nu) {
            return Err(AeError::ChannelShape {
                got: h.shape(),
                expected: (self.nb, self.nu),
            });
        }
        Ok(())
    }

    /// Latent of one channel together with its normalization.
    pub fn encode(&self, h: &CMatrix) -> Result<(Vec<f64>, Preprocessed), AeError> {
        self.check(h)?;
        let pre = preprocess(h);
        let s = self.encoder.predict_batch(&pre.v, 1)?;
        Ok((s, pre))
    }

    /// Decoder followed by [`postprocess`].
    pub fn decode(&self, s: &[f64], alpha: f64, beta: f64) -> Result<CMatrix, AeError> {
        let v = self.decoder.predict_batch(s, 1)?;
        postprocess(&v, alpha, beta, self.nb, self.nu)
    }

    pub fn reconstruct(&self, h: &CMatrix) -> Result<CMatrix, AeError> {
        let (s, pre) = self.encode(h)?;
        self.decode(&s, pre.alpha, pre.beta)
    }
}

impl Parameters for AutoencoderModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        nn::prefixed("enc", self.encoder.tensors())
            .chain(nn::prefixed("dec", self.decoder.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// Preprocessed inputs and positions of a mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AeBatch {
    pub inputs: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
}

impl AeBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a ChannelSample>) -> Self {
        let mut inputs = Vec::new();
        let mut positions = Vec::new();
        for s in samples {
            inputs.extend(preprocess(&s.h).v);
            positions.push(s.position);
        }
        Self { inputs, positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Gaussian latent perturbation, `batch × dim`.
pub fn draw_perturbation<R: Rng + ?Sized>(rng: &mut R, batch: usize, dim: usize, std: f64) -> Vec<f64> {
    (0..batch * dim).map(|_| std * rng::normal(rng)).collect()
}

/// Loss values of one evaluation of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub ci: f64,
    pub tc: f64,
    pub total: f64,
}

/// Reconstruction term on encoded latents `s`; adds decoder gradients into
/// `grads` and returns `dL/ds`.
fn ci_term(
    model: &AutoencoderModel,
    inputs: &[f64],
    s: &[f64],
    noise: &[f64],
    batch: usize,
    grads: &mut AutoencoderModel,
) -> Result<(f64, Vec<f64>), AeError> {
    let z: Vec<f64> = s.iter().zip(noise).map(|(a, b)| a + b).collect();
    let (out, tape) = model.decoder.forward_batch(&z, batch)?;
    let (loss, dout) = nn::squared_error(&out, inputs, 1.0 / batch as f64)?;
    let ds = model.decoder.backward(&tape, &dout, &mut grads.decoder)?;
    Ok((loss, ds))
}

/// Standardizes `x` in place; returns the standard deviation used and
/// whether the guard fired.
fn standardize(x: &mut [f64]) -> (f64, bool) {
    let (mean, std, guarded) = guarded_stats(x);
    for v in x.iter_mut() {
        *v = (*v - mean) / std;
    }
    (std, guarded)
}

fn squared_distances(points: &[f64], k: usize, dim: usize) -> Vec<f64> {
    let mut d = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let dist: f64 = points[i * dim..(i + 1) * dim]
                .iter()
                .zip(&points[j * dim..(j + 1) * dim])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * k + j] = dist;
            d[j * k + i] = dist;
        }
    }
    d
}

/// `‖D − B‖²_F` for standardized squared-distance matrices of latents
/// `s` (`k × dim`) and positions, with its gradient with respect to `s`.
pub fn distance_matching(s: &[f64], dim: usize, positions: &[[f64; 3]]) -> Result<(f64, Vec<f64>), AeError> {
    let k = positions.len();
    if k < 2 {
        return Err(AeError::BatchTooSmall(k));
    }
    if s.len() != k * dim {
        return Err(NnError::Length {
            what: "latent batch",
            expected: k * dim,
            got: s.len(),
        }
        .into());
    }
    let flat_pos: Vec<f64> = positions.iter().flatten().copied().collect();
    let mut d = squared_distances(s, k, dim);
    let mut b = squared_distances(&flat_pos, k, 3);
    let (sigma, guarded) = standardize(&mut d);
    standardize(&mut b);

    let n = (k * k) as f64;
    let g: Vec<f64> = d.iter().zip(&b).map(|(x, y)| 2.0 * (x - y)).collect();
    let loss = g.iter().map(|x| x * x).sum::<f64>() / 4.0;
    let g_mean = g.iter().sum::<f64>() / n;
    let gz_mean = if guarded {
        0.0
    } else {
        g.iter().zip(&d).map(|(x, z)| x * z).sum::<f64>() / n
    };
    // Gradient with respect to the unstandardized squared distances.
    let p: Vec<f64> = g
        .iter()
        .zip(&d)
        .map(|(x, z)| (x - g_mean - z * gz_mean) / sigma)
        .collect();

    let mut ds = vec![0.0; k * dim];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let w = 2.0 * (p[i * k + j] + p[j * k + i]);
            for c in 0..dim {
                ds[i * dim + c] += w * (s[i * dim + c] - s[j * dim + c]);
            }
        }
    }
    Ok((loss, ds))
}

/// Joint objective `L_CI + λ·L_TC` on one batch with an explicit latent
/// perturbation. Gradients are added into `grads`. With `lambda = 0` the
/// distance term is skipped.
pub fn objective(
    model: &AutoencoderModel,
    batch: &AeBatch,
    noise: &[f64],
    lambda: f64,
    grads: &mut AutoencoderModel,
) -> Result<LossParts, AeError> {
    let k = batch.len();
    let dim = model.latent_dim();
    if k == 0 {
        return Err(AeError::BatchTooSmall(0));
    }
    nn::check_len("perturbation", k * dim, noise.len())?;
    let (s, tape): (Vec<f64>, MlpTape) = model.encoder.forward_batch(&batch.inputs, k)?;
    let (ci, mut ds) = ci_term(model, &batch.inputs, &s, noise, k, grads)?;
    let mut tc = 0.0;
    if lambda != 0.0 {
        let (value, ds_tc) = distance_matching(&s, dim, &batch.positions)?;
        tc = value;
        for (a, b) in ds.iter_mut().zip(&ds_tc) {
            *a += lambda * b;
        }
    }
    model.encoder.backward(&tape, &ds, &mut grads.encoder)?;
    Ok(LossParts {
        ci,
        tc,
        total: ci + lambda * tc,
    })
}

/// `L_CI` alone: mean over the batch of `‖v − d(e(v) + n)‖²`.
pub fn loss_ci(
    model: &AutoencoderModel,
    batch: &AeBatch,
    noise: &[f64],
) -> Result<(f64, AutoencoderModel), AeError> {
    let mut grads = model.zeros_like();
    let parts = objective(model, batch, noise, 0.0, &mut grads)?;
    Ok((parts.ci, grads))
}

/// `L_TC` alone; decoder gradients are zero.
pub fn loss_tc(model: &AutoencoderModel, batch: &AeBatch) -> Result<(f64, AutoencoderModel), AeError> {
    let k = batch.len();
    if k < 2 {
        return Err(AeError::BatchTooSmall(k));
    }
    let (s, tape) = model.encoder.forward_batch(&batch.inputs, k)?;
    let (loss, ds) = distance_matching(&s, model.latent_dim(), &batch.positions)?;
    let mut grads = model.zeros_like();
    model.encoder.backward(&tape, &ds, &mut grads.encoder)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeHyper {
    pub lambda_tc: f64,
    pub perturb_std: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a lower epoch loss; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AeHyper {
    fn default() -> Self {
        Self {
            lambda_tc: 0.1,
            perturb_std: 0.05,
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 500,
            patience: 50,
            seed: 0,
        }
    }
}

impl AeHyper {
    pub fn validate(&self) -> Result<(), AeError> {
        if !(self.lambda_tc >= 0.0) {
            return Err(AeError::Hyper("lambda_tc must be >= 0"));
        }
        if !(self.perturb_std >= 0.0) {
            return Err(AeError::Hyper("perturb_std must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(AeError::Hyper("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AeError::Hyper("learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// Sample-weighted mean losses per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub epochs: Vec<LossParts>,
}

/// Splits a permutation into batches of `size`, folding a trailing batch of
/// one into its predecessor so every batch supports the distance loss.
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let n = order.len();
        let start = n - 1 - out[out.len() - 1].len();
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Adam on `L_CI + λ·L_TC` over shuffled mini-batches.
pub fn train_autoencoder(
    mut model: AutoencoderModel,
    dataset: &[ChannelSample],
    hyper: &AeHyper,
) -> Result<(AutoencoderModel, TrainingCurve), AeError> {
    hyper.validate()?;
    if dataset.len() < 2 {
        return Err(AeError::DatasetTooSmall);
    }
    for s in dataset {
        model.check(&s.h)?;
    }
    let d = 2 * model.nb * model.nu;
    let dim = model.latent_dim();
    let all = AeBatch::from_samples(dataset);
    let mut shuffle = rng::stream(rng::derive_seed(hyper.seed, "ae-shuffle"));
    let mut perturb = rng::stream(rng::derive_seed(hyper.seed, "ae-perturb"));
    let mut opt = Adam::new(hyper.learning_rate);
    let mut curve = TrainingCurve::default();
    let mut grads = model.zeros_like();
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..hyper.epochs {
        let order = rng::permutation(&mut shuffle, dataset.len());
        let mut sum = LossParts::default();
        for idx in batches(&order, hyper.batch_size) {
            let batch = AeBatch {
                inputs: idx.iter().flat_map(|&i| &all.inputs[i * d..(i + 1) * d]).copied().collect(),
                positions: idx.iter().map(|&i| all.positions[i]).collect(),
            };
            let noise = draw_perturbation(&mut perturb, idx.len(), dim, hyper.perturb_std);
            grads.fill_zero();
            let parts = objective(&model, &batch, &noise, hyper.lambda_tc, &mut grads)?;
            if !parts.total.is_finite() {
                return Err(AeError::Diverged { epoch });
            }
            opt.step(&mut model, &grads)?;
            let w = idx.len() as f64;
            sum.ci += w * parts.ci;
            sum.tc += w * parts.tc;
            sum.total += w * parts.total;
        }
        let n = dataset.len() as f64;
        let stats = LossParts {
            ci: sum.ci / n,
            tc: sum.tc / n,
            total: sum.total / n,
        };
        curve.epochs.push(stats);
        if !model.is_finite() {
            return Err(AeError::Diverged { epoch });
        }
        if stats.total < best {
            best = stats.total;
            since_best = 0;
        } else {
            since_best += 1;
            if hyper.patience > 0 && since_best >= hyper.patience {
                break;
            }
        }
    }
    Ok((model, curve))
}

/// `‖s⁽ᵗ⁾ − s⁽⁰⁾‖₂` along a trajectory, divided by its maximum (all zeros if
/// every distance is zero).
pub fn latent_smoothness(model: &AutoencoderModel, trajectory: &[ChannelSample]) -> Result<Vec<f64>, AeError> {
    if trajectory.len() < 2 {
        return Err(AeError::DatasetTooSmall);
    }
    let mut latents = Vec::with_capacity(trajectory.len());
    for s in trajectory {
        latents.push(model.encode(&s.h)?.0);
    }
    let d: Vec<f64> = latents
        .iter()
        .map(|s| {
            libm::sqrt(
                s.iter()
                    .zip(&latents[0])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            )
        })
        .collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; d.len()]);
    }
    Ok(d.into_iter().map(|x| x / max).collect())
}
