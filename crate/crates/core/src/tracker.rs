//! LSTM tracking of autoencoder latents from pilot observations.
//!
//! Per coherence interval the flattened observation `y⁽ᵗ⁾` passes through an
//! input head `g₁`, a stacked LSTM whose state starts at zero, and two output
//! heads: `g₂` predicts the latent `ŝ⁽ᵗ⁾` and `g₃` the amplitude statistics
//! `(α̂⁽ᵗ⁾, β̂⁽ᵗ⁾)`. The channel estimate is the frozen decoder applied to
//! `ŝ⁽ᵗ⁾` followed by postprocessing. No layer width depends on the antenna
//! counts.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::autoencoder::{self, AeError, AutoencoderModel};
use crate::channel::ChannelSample;
use crate::linalg::CMatrix;
use crate::nn::{self, Adam, LstmStack, LstmTape, Mlp, MlpTape, NnError, Parameters, TensorRef};
use crate::rng;
use crate::signaling::{self, NoiseSpec, PilotConfig, SignalingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("no sequences")]
    Empty,
    #[error("sequence {index} has length {got}, expected {expected}")]
    SequenceLength { index: usize, got: usize, expected: usize },
    #[error("latent width {got} does not match the tracker's {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error("invalid hyperparameter: {0}")]
    Hyper(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Signaling(#[from] SignalingError),
}

/// Latent state and amplitude statistics of one coherence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub s: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Flattened observations and encoder targets along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub observations: Vec<Vec<f64>>,
    pub targets: Vec<LatentRecord>,
}

/// Layer widths of a tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerDims {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_width: usize,
}

impl TrackerDims {
    /// Heads of width 128 around a 3 × 64 LSTM.
    pub fn new(obs_dim: usize, latent_dim: usize) -> Self {
        Self {
            obs_dim,
            latent_dim,
            hidden: 64,
            layers: 3,
            head_width: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    pub g1: Mlp,
    pub lstm: LstmStack,
    pub g2: Mlp,
    pub g3: Mlp,
    /// Observations are divided by this before `g₁`.
    pub obs_scale: f64,
}

struct TrackerTape {
    steps: usize,
    batch: usize,
    g1: MlpTape,
    lstm: LstmTape,
    g2: MlpTape,
    g3: MlpTape,
}

impl TrackerModel {
    pub fn init<R: Rng + ?Sized>(dims: TrackerDims, rng: &mut R) -> Result<Self, TrackerError> {
        let TrackerDims {
            obs_dim,
            latent_dim,
            hidden,
            layers,
            head_width,
        } = dims;
        Ok(Self {
            g1: Mlp::init(&[obs_dim, head_width, hidden], rng)?,
            lstm: LstmStack::init(hidden, hidden, layers, rng)?,
            g2: Mlp::init(&[hidden, head_width, latent_dim], rng)?,
            g3: Mlp::init(&[hidden, head_width, 2], rng)?,
            obs_scale: 1.0,
        })
    }

    pub fn from_parts(g1: Mlp, lstm: LstmStack, g2: Mlp, g3: Mlp, obs_scale: f64) -> Result<Self, TrackerError> {
        let h = lstm.hidden_size();
        if g1.output_dim() != lstm.input_dim() || g2.input_dim() != h || g3.input_dim() != h {
            return Err(NnError::Architecture("heads must match the LSTM widths").into());
        }
        if g3.output_dim() != 2 {
            return Err(NnError::Architecture("amplitude head must have 2 outputs").into());
        }
        if !(obs_scale > 0.0) || !obs_scale.is_finite() {
            return Err(TrackerError::Hyper("obs_scale must be positive"));
        }
        Ok(Self {
            g1,
            lstm,
            g2,
            g3,
            obs_scale,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            g1: self.g1.zeros_like(),
            lstm: self.lstm.zeros_like(),
            g2: self.g2.zeros_like(),
            g3: self.g3.zeros_like(),
            obs_scale: self.obs_scale,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.g1.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.g2.output_dim()
    }

    /// Forward over `batch` equal-length sequences. `obs[b][t]` is one
    /// observation; outputs are row-major with row `t·batch + b`.
    fn forward_batch(&self, obs: &[&[Vec<f64>]]) -> Result<(Vec<f64>, Vec<f64>, TrackerTape), TrackerError> {
        let batch = obs.len();
        let steps = obs.first().map_or(0, |o| o.len());
        let d = self.obs_dim();
        let mut x = Vec::with_capacity(steps * batch * d);
        for t in 0..steps {
            for (b, seq) in obs.iter().enumerate() {
                if seq.len() != steps {
                    return Err(TrackerError::SequenceLength {
                        index: b,
                        got: seq.len(),
                        expected: steps,
                    });
                }
                nn::check_len("observation", d, seq[t].len())?;
                x.extend(seq[t].iter().map(|v| v / self.obs_scale));
            }
        }
        let rows = steps * batch;
        let (u, g1) = self.g1.forward_batch(&x, rows)?;
        let w = self.lstm.input_dim();
        let xs: Vec<Vec<f64>> = u.chunks(batch * w).map(<[f64]>::to_vec).collect();
        let (hs, lstm) = self.lstm.forward_sequence(&xs, batch)?;
        let h: Vec<f64> = hs.concat();
        let (s, g2) = self.g2.forward_batch(&h, rows)?;
        let (ab, g3) = self.g3.forward_batch(&h, rows)?;
        Ok((
            s,
            ab,
            TrackerTape {
                steps,
                batch,
                g1,
                lstm,
                g2,
                g3,
            },
        ))
    }

    fn backward_batch(
        &self,
        tape: &TrackerTape,
        ds: &[f64],
        dab: &[f64],
        grads: &mut TrackerModel,
    ) -> Result<(), TrackerError> {
        let dh2 = self.g2.backward(&tape.g2, ds, &mut grads.g2)?;
        let dh3 = self.g3.backward(&tape.g3, dab, &mut grads.g3)?;
        let hidden = self.lstm.hidden_size();
        let dh: Vec<Vec<f64>> = dh2
            .chunks(tape.batch * hidden)
            .zip(dh3.chunks(tape.batch * hidden))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        debug_assert_eq!(dh.len(), tape.steps);
        let dxs = self.lstm.backward_sequence(&tape.lstm, &dh, &mut grads.lstm)?;
        self.g1.backward(&tape.g1, &dxs.concat(), &mut grads.g1)?;
        Ok(())
    }
}

impl Parameters for TrackerModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        nn::prefixed("g1", self.g1.tensors())
            .chain(nn::prefixed("lstm", self.lstm.tensors()))
            .chain(nn::prefixed("g2", self.g2.tensors()))
            .chain(nn::prefixed("g3", self.g3.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.g1.tensors_mut();
        t.extend(self.lstm.tensors_mut());
        t.extend(self.g2.tensors_mut());
        t.extend(self.g3.tensors_mut());
        t
    }
}

/// Encoder targets for a list of channels.
pub fn encode_targets<'a>(
    ae: &AutoencoderModel,
    channels: impl IntoIterator<Item = &'a CMatrix>,
) -> Result<Vec<LatentRecord>, TrackerError> {
    channels
        .into_iter()
        .map(|h| {
            let (s, pre) = ae.encode(h)?;
            Ok(LatentRecord {
                s,
                alpha: pre.alpha,
                beta: pre.beta,
            })
        })
        .collect()
}

/// Noisy flattened observations of each channel, drawing noise from `rng`.
pub fn observe_sequence<'a, R: Rng + ?Sized>(
    channels: impl IntoIterator<Item = &'a CMatrix>,
    pilots: &PilotConfig,
    variance: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, TrackerError> {
    channels
        .into_iter()
        .map(|h| {
            let y = signaling::observe_with(h, pilots, variance, rng)?;
            Ok(signaling::flatten_observation(&y))
        })
        .collect()
}

/// First `steps` intervals of each trajectory as a training sequence, with
/// fresh noise for every observation.
pub fn build_sequences(
    trajectories: &[Vec<ChannelSample>],
    ae: &AutoencoderModel,
    pilots: &PilotConfig,
    noise: &NoiseSpec,
    steps: usize,
) -> Result<Vec<TrainingSequence>, TrackerError> {
    if steps == 0 {
        return Err(TrackerError::Hyper("sequence length must be >= 1"));
    }
    let mut r = rng::stream(noise.rng_seed);
    trajectories
        .iter()
        .enumerate()
        .map(|(index, traj)| {
            if traj.len() < steps {
                return Err(TrackerError::SequenceLength {
                    index,
                    got: traj.len(),
                    expected: steps,
                });
            }
            let hs = traj[..steps].iter().map(|s| &s.h);
            Ok(TrainingSequence {
                observations: observe_sequence(hs.clone(), pilots, noise.variance, &mut r)?,
                targets: encode_targets(ae, hs)?,
            })
        })
        .collect()
}

/// Causal per-step predictions for one observation sequence.
pub fn tracker_forward(model: &TrackerModel, observations: &[Vec<f64>]) -> Result<Vec<LatentRecord>, TrackerError> {
    let (s, ab, _) = model.forward_batch(&[observations])?;
    let k = model.latent_dim();
    Ok(s.chunks(k)
        .zip(ab.chunks(2))
        .map(|(s, ab)| LatentRecord {
            s: s.to_vec(),
            alpha: ab[0],
            beta: ab[1],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerHyper {
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a lower epoch loss; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrackerHyper {
    fn default() -> Self {
        Self {
            lambda_alpha: 0.1,
            lambda_beta: 0.1,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 16,
            patience: 0,
            seed: 0,
        }
    }
}

impl TrackerHyper {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.lambda_alpha >= 0.0 && self.lambda_beta >= 0.0) {
            return Err(TrackerError::Hyper("lambda_alpha and lambda_beta must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrackerError::Hyper("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(TrackerError::Hyper("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Batch-mean of the per-sequence loss
/// `(1/T) Σₜ ‖s − ŝ‖² + λ_α(α − α̂)² + λ_β(β − β̂)²`; gradients are added
/// into `grads`.
pub fn loss_lstm_batch(
    model: &TrackerModel,
    seqs: &[&TrainingSequence],
    lambda_alpha: f64,
    lambda_beta: f64,
    grads: &mut TrackerModel,
) -> Result<f64, TrackerError> {
    if seqs.is_empty() {
        return Err(TrackerError::Empty);
    }
    let obs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.observations.as_slice()).collect();
    let (s, ab, tape) = model.forward_batch(&obs)?;
    let batch = seqs.len();
    let steps = tape.steps;
    let k = model.latent_dim();
    let scale = 1.0 / (steps * batch) as f64;
    let mut ds = vec![0.0; s.len()];
    let mut dab = vec![0.0; ab.len()];
    let mut loss = 0.0;
    for (b, seq) in seqs.iter().enumerate() {
        if seq.targets.len() != steps {
            return Err(TrackerError::SequenceLength {
                index: b,
                got: seq.targets.len(),
                expected: steps,
            });
        }
        for (t, target) in seq.targets.iter().enumerate() {
            if target.s.len() != k {
                return Err(TrackerError::LatentDim {
                    got: target.s.len(),
                    expected: k,
                });
            }
            let row = t * batch + b;
            for j in 0..k {
                let e = s[row * k + j] - target.s[j];
                loss += scale * e * e;
                ds[row * k + j] = 2.0 * scale * e;
            }
            let ea = ab[2 * row] - target.alpha;
            let eb = ab[2 * row + 1] - target.beta;
            loss += scale * (lambda_alpha * ea * ea + lambda_beta * eb * eb);
            dab[2 * row] = 2.0 * scale * lambda_alpha * ea;
            dab[2 * row + 1] = 2.0 * scale * lambda_beta * eb;
        }
    }
    model.backward_batch(&tape, &ds, &dab, grads)?;
    Ok(loss)
}

/// Loss of one sequence and its gradients.
pub fn loss_lstm(
    model: &TrackerModel,
    seq: &TrainingSequence,
    hyper: &TrackerHyper,
) -> Result<(f64, TrackerModel), TrackerError> {
    let mut grads = model.zeros_like();
    let loss = loss_lstm_batch(model, &[seq], hyper.lambda_alpha, hyper.lambda_beta, &mut grads)?;
    Ok((loss, grads))
}

/// Population standard deviation of all observation entries (1 if zero).
pub fn observation_scale(sequences: &[TrainingSequence]) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for y in sequences.iter().flat_map(|s| s.observations.iter()).flatten() {
        n += 1;
        sum += y;
        sq += y * y;
    }
    if n == 0 {
        return 1.0;
    }
    let mean = sum / n as f64;
    let std = libm::sqrt((sq / n as f64 - mean * mean).max(0.0));
    if std > autoencoder::STD_GUARD {
        std
    } else {
        1.0
    }
}

/// Adam on the tracker loss over shuffled batches of sequences. The
/// observation scale is fitted to the training observations first. The
/// decoder is not an input, so it cannot change.
pub fn train_tracker(
    mut model: TrackerModel,
    sequences: &[TrainingSequence],
    hyper: &TrackerHyper,
) -> Result<(TrackerModel, Vec<f64>), TrackerError> {
    hyper.validate()?;
    if sequences.is_empty() {
        return Err(TrackerError::Empty);
    }
    model.obs_scale = observation_scale(sequences);
    let mut shuffle = rng::stream(rng::derive_seed(hyper.seed, "tracker-shuffle"));
    let mut opt = Adam::new(hyper.learning_rate);
    let mut grads = model.zeros_like();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..hyper.epochs {
        let order = rng::permutation(&mut shuffle, sequences.len());
        let mut total = 0.0;
        for idx in order.chunks(hyper.batch_size) {
            let seqs: Vec<&TrainingSequence> = idx.iter().map(|&i| &sequences[i]).collect();
            grads.fill_zero();
            let loss = loss_lstm_batch(&model, &seqs, hyper.lambda_alpha, hyper.lambda_beta, &mut grads)?;
            if !loss.is_finite() {
                return Err(TrackerError::Diverged { epoch });
            }
            opt.step(&mut model, &grads)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / sequences.len() as f64;
        curve.push(mean);
        if !model.is_finite() {
            return Err(TrackerError::Diverged { epoch });
        }
        if mean < best {
            best = mean;
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

/// Channel estimates `f⁻¹(d(ŝ⁽ᵗ⁾), α̂⁽ᵗ⁾, β̂⁽ᵗ⁾)` for one observation sequence.
pub fn infer_channels(
    tracker: &TrackerModel,
    ae: &AutoencoderModel,
    observations: &[Vec<f64>],
) -> Result<Vec<CMatrix>, TrackerError> {
    if tracker.latent_dim() != ae.latent_dim() {
        return Err(TrackerError::LatentDim {
            got: ae.latent_dim(),
            expected: tracker.latent_dim(),
        });
    }
    decode_records(ae, &tracker_forward(tracker, observations)?)
}

/// Decoder and postprocessing applied to latent records.
pub fn decode_records(ae: &AutoencoderModel, records: &[LatentRecord]) -> Result<Vec<CMatrix>, TrackerError> {
    records
        .iter()
        .map(|r| Ok(ae.decode(&r.s, r.alpha, r.beta)?))
        .collect()
}
