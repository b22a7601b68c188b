//! End-to-end LSTM baseline that regresses the full channel.
//!
//! Same input head and LSTM core as the latent tracker, but the output head
//! emits `[Re vec(H); Im vec(H)]` directly, so its last layer grows with
//! `N_B·N_U`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelSample;
use crate::linalg::CMatrix;
use crate::nn::{self, Adam, LstmStack, Mlp, Parameters, TensorRef};
use crate::rng;
use crate::signaling::{NoiseSpec, PilotConfig};
use crate::tracker::{observation_scale, observe_sequence, TrackerDims, TrackerError, TrainingSequence};

/// Hidden width of the output head.
pub const DEFAULT_HEAD_WIDTH: usize = 1280;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectModel {
    pub g1: Mlp,
    pub lstm: LstmStack,
    pub head: Mlp,
    pub obs_scale: f64,
    /// Channel entries are predicted in units of this scale.
    pub channel_scale: f64,
    nb: usize,
    nu: usize,
}

/// Observations with flattened, unscaled channel targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectSequence {
    pub observations: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

fn flatten_channel(h: &CMatrix) -> Vec<f64> {
    let v = h.as_slice();
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

impl DirectModel {
    /// Input head and LSTM as in `dims`; output head
    /// `hidden → head_width → 2·N_B·N_U`.
    pub fn init<R: Rng + ?Sized>(
        dims: TrackerDims,
        head_width: usize,
        nb: usize,
        nu: usize,
        rng: &mut R,
    ) -> Result<Self, TrackerError> {
        Ok(Self {
            g1: Mlp::init(&[dims.obs_dim, dims.head_width, dims.hidden], rng)?,
            lstm: LstmStack::init(dims.hidden, dims.hidden, dims.layers, rng)?,
            head: Mlp::init(&[dims.hidden, head_width, 2 * nb * nu], rng)?,
            obs_scale: 1.0,
            channel_scale: 1.0,
            nb,
            nu,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            g1: self.g1.zeros_like(),
            lstm: self.lstm.zeros_like(),
            head: self.head.zeros_like(),
            ..self.clone()
        }
    }

    pub fn channel_shape(&self) -> (usize, usize) {
        (self.nb, self.nu)
    }

    /// Outputs for `batch` equal-length sequences, row `t·batch + b`, in
    /// units of `channel_scale`. Returns the tapes needed for backward.
    #[allow(clippy::type_complexity)]
    fn forward_batch(
        &self,
        obs: &[&[Vec<f64>]],
    ) -> Result<(Vec<f64>, (nn::MlpTape, nn::LstmTape, nn::MlpTape), usize), TrackerError> {
        let batch = obs.len();
        let steps = obs.first().map_or(0, |o| o.len());
        let d = self.g1.input_dim();
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
        let (u, t1) = self.g1.forward_batch(&x, rows)?;
        let xs: Vec<Vec<f64>> = u.chunks(batch * self.lstm.input_dim()).map(<[f64]>::to_vec).collect();
        let (hs, t2) = self.lstm.forward_sequence(&xs, batch)?;
        let (out, t3) = self.head.forward_batch(&hs.concat(), rows)?;
        Ok((out, (t1, t2, t3), batch))
    }

    /// Channel estimates for one observation sequence.
    pub fn infer(&self, observations: &[Vec<f64>]) -> Result<Vec<CMatrix>, TrackerError> {
        let (out, _, _) = self.forward_batch(&[observations])?;
        let n = self.nb * self.nu;
        Ok(out
            .chunks(2 * n)
            .map(|v| {
                let data = (0..n)
                    .map(|i| Complex64::new(v[i], v[n + i]) * self.channel_scale)
                    .collect();
                CMatrix::new(self.nb, self.nu, data).expect("head width is 2·N_B·N_U")
            })
            .collect())
    }
}

impl Parameters for DirectModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        nn::prefixed("g1", self.g1.tensors())
            .chain(nn::prefixed("lstm", self.lstm.tensors()))
            .chain(nn::prefixed("head", self.head.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.g1.tensors_mut();
        t.extend(self.lstm.tensors_mut());
        t.extend(self.head.tensors_mut());
        t
    }
}

/// Noisy observations and channel targets for each trajectory prefix.
pub fn build_direct_sequences(
    trajectories: &[Vec<ChannelSample>],
    pilots: &PilotConfig,
    noise: &NoiseSpec,
    steps: usize,
) -> Result<Vec<DirectSequence>, TrackerError> {
    let mut r = rng::stream(noise.rng_seed);
    trajectories
        .iter()
        .enumerate()
        .map(|(index, traj)| {
            if traj.len() < steps || steps == 0 {
                return Err(TrackerError::SequenceLength {
                    index,
                    got: traj.len(),
                    expected: steps,
                });
            }
            let hs = traj[..steps].iter().map(|s| &s.h);
            Ok(DirectSequence {
                observations: observe_sequence(hs.clone(), pilots, noise.variance, &mut r)?,
                targets: hs.map(flatten_channel).collect(),
            })
        })
        .collect()
}

/// Batch-mean of `(1/T) Σₜ ‖ĥ⁽ᵗ⁾ − h⁽ᵗ⁾‖²` in scaled units.
pub fn loss_direct_batch(
    model: &DirectModel,
    seqs: &[&DirectSequence],
    grads: &mut DirectModel,
) -> Result<f64, TrackerError> {
    if seqs.is_empty() {
        return Err(TrackerError::Empty);
    }
    let obs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.observations.as_slice()).collect();
    let (out, (t1, t2, t3), batch) = model.forward_batch(&obs)?;
    let width = model.head.output_dim();
    let steps = out.len() / (width * batch);
    let scale = 1.0 / (steps * batch) as f64;
    let mut dout = vec![0.0; out.len()];
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
            nn::check_len("channel target", width, target.len())?;
            let row = (t * batch + b) * width;
            for j in 0..width {
                let e = out[row + j] - target[j] / model.channel_scale;
                loss += scale * e * e;
                dout[row + j] = 2.0 * scale * e;
            }
        }
    }
    let dh = model.head.backward(&t3, &dout, &mut grads.head)?;
    let hidden = model.lstm.hidden_size();
    let dhs: Vec<Vec<f64>> = dh.chunks(batch * hidden).map(<[f64]>::to_vec).collect();
    let dxs = model.lstm.backward_sequence(&t2, &dhs, &mut grads.lstm)?;
    model.g1.backward(&t1, &dxs.concat(), &mut grads.g1)?;
    Ok(loss)
}

/// Adam on the direct regression loss. Observation and channel scales are
/// fitted to the training data first.
pub fn train_direct(
    mut model: DirectModel,
    sequences: &[DirectSequence],
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(DirectModel, Vec<f64>), TrackerError> {
    if sequences.is_empty() {
        return Err(TrackerError::Empty);
    }
    if batch_size == 0 || !(learning_rate > 0.0) {
        return Err(TrackerError::Hyper("batch_size >= 1 and learning_rate > 0 required"));
    }
    let as_tracker: Vec<TrainingSequence> = sequences
        .iter()
        .map(|s| TrainingSequence {
            observations: s.observations.clone(),
            targets: Vec::new(),
        })
        .collect();
    model.obs_scale = observation_scale(&as_tracker);
    let (mut sq, mut n) = (0.0, 0usize);
    for v in sequences.iter().flat_map(|s| s.targets.iter()).flatten() {
        sq += v * v;
        n += 1;
    }
    let rms = libm::sqrt(sq / n.max(1) as f64);
    model.channel_scale = if rms > 0.0 { rms } else { 1.0 };

    let mut shuffle = rng::stream(rng::derive_seed(seed, "direct-shuffle"));
    let mut opt = Adam::new(learning_rate);
    let mut grads = model.zeros_like();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = rng::permutation(&mut shuffle, sequences.len());
        let mut total = 0.0;
        for idx in order.chunks(batch_size) {
            let seqs: Vec<&DirectSequence> = idx.iter().map(|&i| &sequences[i]).collect();
            grads.fill_zero();
            let loss = loss_direct_batch(&model, &seqs, &mut grads)?;
            if !loss.is_finite() {
                return Err(TrackerError::Diverged { epoch });
            }
            opt.step(&mut model, &grads)?;
            total += loss * idx.len() as f64;
        }
        curve.push(total / sequences.len() as f64);
    }
    Ok((model, curve))
}
