//! Finite-difference checks of every hand-written backward pass on small
//! double-precision models.

use chartrack_core::autoencoder::{self, AeBatch, AutoencoderModel};
use chartrack_core::channel::ChannelSample;
use chartrack_core::nn::{grad_check, squared_error, LstmStack, Mlp, Parameters};
use chartrack_core::rng::{self, Stream};
use chartrack_core::tracker::{self, LatentRecord, TrackerDims, TrackerHyper, TrackerModel, TrainingSequence};
use chartrack_core::CMatrix;

use crate::error::{Result, Stage};

/// Central-difference step.
pub const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    pub params: usize,
    pub error: f64,
}

fn normals(r: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::normal(r)).collect()
}

fn channels(r: &mut Stream, k: usize, nb: usize, nu: usize) -> Vec<ChannelSample> {
    (0..k)
        .map(|_| ChannelSample {
            h: CMatrix::from_fn(nb, nu, |_, _| rng::complex_normal(r, 1.0)),
            position: [rng::normal(r) * 5.0, rng::normal(r) * 5.0, 1.5],
        })
        .collect()
}

/// Adds small noise to every parameter. Freshly initialized biases are all
/// zero, which can put a ReLU exactly on its kink.
fn jitter<M: Parameters>(model: &mut M, r: &mut Stream) {
    let p: Vec<f64> = model.flatten().iter().map(|x| x + 0.1 * rng::normal(r)).collect();
    model.load_flat(&p).expect("same layout");
}

fn check<M: Parameters + Clone>(
    name: &'static str,
    step: f64,
    model: &M,
    analytic: &M,
    loss: impl Fn(&M) -> f64,
) -> GradReport {
    let err = grad_check(
        |p| {
            let mut m = model.clone();
            m.load_flat(p).expect("same layout");
            loss(&m)
        },
        &model.flatten(),
        &analytic.flatten(),
        step,
    );
    GradReport {
        name,
        params: model.num_params(),
        error: err,
    }
}

fn mlp(r: &mut Stream) -> Result<GradReport> {
    let mut m = Mlp::init(&[4, 6, 5, 3], r).stage("grad-check")?;
    jitter(&mut m, r);
    let batch = 3;
    let x = normals(r, 4 * batch);
    let target = normals(r, 3 * batch);
    let loss = |m: &Mlp| {
        let y = m.predict_batch(&x, batch).expect("shapes");
        squared_error(&y, &target, 1.0).expect("shapes").0
    };
    let (y, tape) = m.forward_batch(&x, batch).stage("grad-check")?;
    let (_, dy) = squared_error(&y, &target, 1.0).stage("grad-check")?;
    let mut g = m.zeros_like();
    m.backward(&tape, &dy, &mut g).stage("grad-check")?;
    Ok(check("mlp", STEP, &m, &g, loss))
}

fn lstm(r: &mut Stream) -> Result<GradReport> {
    let (inputs, hidden, batch, steps) = (3, 4, 2, 5);
    let mut m = LstmStack::init(inputs, hidden, 2, r).stage("grad-check")?;
    jitter(&mut m, r);
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| normals(r, inputs * batch)).collect();
    let w: Vec<Vec<f64>> = (0..steps).map(|_| normals(r, hidden * batch)).collect();
    let loss = |m: &LstmStack| {
        let (hs, _) = m.forward_sequence(&xs, batch).expect("shapes");
        hs.iter()
            .zip(&w)
            .map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let (_, tape) = m.forward_sequence(&xs, batch).stage("grad-check")?;
    let mut g = m.zeros_like();
    m.backward_sequence(&tape, &w, &mut g).stage("grad-check")?;
    Ok(check("lstm", STEP, &m, &g, loss))
}

fn toy_autoencoder(r: &mut Stream) -> Result<AutoencoderModel> {
    let mut m = AutoencoderModel::init(3, 2, &[7], 3, &[6], r).stage("grad-check")?;
    jitter(&mut m, r);
    Ok(m)
}

fn loss_ci(r: &mut Stream) -> Result<GradReport> {
    let m = toy_autoencoder(r)?;
    let batch = AeBatch::from_samples(&channels(r, 4, 3, 2));
    let noise: Vec<f64> = normals(r, 4 * 3).iter().map(|x| 0.05 * x).collect();
    let (_, g) = autoencoder::loss_ci(&m, &batch, &noise).stage("grad-check")?;
    Ok(check("loss_ci", STEP, &m, &g, |m| {
        autoencoder::loss_ci(m, &batch, &noise).expect("shapes").0
    }))
}

/// The distance loss is invariant to translating every latent, so the
/// encoder's output bias has an exactly zero gradient while finite
/// differences only see roundoff. Those entries must be zero analytically;
/// every other parameter goes through the finite-difference check.
fn loss_tc(r: &mut Stream) -> Result<GradReport> {
    let m = toy_autoencoder(r)?;
    let batch = AeBatch::from_samples(&channels(r, 8, 3, 2));
    let (_, g) = autoencoder::loss_tc(&m, &batch).stage("grad-check")?;
    let last = format!("enc.{}.b", m.encoder.layers().len() - 1);
    let mut invariant = Vec::new();
    let mut off = 0;
    for t in m.tensors() {
        if t.name == last {
            invariant.extend(off..off + t.data.len());
        }
        off += t.data.len();
    }
    let full = m.flatten();
    let analytic = g.flatten();
    let free: Vec<usize> = (0..full.len()).filter(|i| !invariant.contains(i)).collect();
    let mut probe = m.clone();
    let mut err = grad_check(
        |p| {
            let mut q = full.clone();
            for (&i, &x) in free.iter().zip(p) {
                q[i] = x;
            }
            probe.load_flat(&q).expect("same layout");
            autoencoder::loss_tc(&probe, &batch).expect("shapes").0
        },
        &free.iter().map(|&i| full[i]).collect::<Vec<_>>(),
        &free.iter().map(|&i| analytic[i]).collect::<Vec<_>>(),
        STEP,
    );
    if invariant.is_empty() || invariant.iter().any(|&i| analytic[i].abs() > 1e-12) {
        err = f64::INFINITY;
    }
    Ok(GradReport {
        name: "loss_tc",
        params: m.num_params(),
        error: err,
    })
}

fn loss_lstm(r: &mut Stream) -> Result<GradReport> {
    let dims = TrackerDims {
        obs_dim: 4,
        latent_dim: 3,
        hidden: 5,
        layers: 2,
        head_width: 6,
    };
    let mut m = TrackerModel::init(dims, r).stage("grad-check")?;
    jitter(&mut m, r);
    m.obs_scale = 1.7;
    let steps = 4;
    let seq = TrainingSequence {
        observations: (0..steps).map(|_| normals(r, 4)).collect(),
        targets: (0..steps)
            .map(|_| LatentRecord {
                s: normals(r, 3),
                alpha: rng::normal(r),
                beta: rng::normal(r).abs(),
            })
            .collect(),
    };
    let hyper = TrackerHyper {
        lambda_alpha: 0.3,
        lambda_beta: 0.7,
        ..TrackerHyper::default()
    };
    let (_, g) = tracker::loss_lstm(&m, &seq, &hyper).stage("grad-check")?;
    Ok(check("loss_lstm", STEP, &m, &g, |m| {
        tracker::loss_lstm(m, &seq, &hyper).expect("shapes").0
    }))
}

/// Worst relative gradient error of each backward pass.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut r = rng::stream(rng::derive_seed(seed, "grad-check"));
    Ok(vec![
        mlp(&mut r)?,
        lstm(&mut r)?,
        loss_ci(&mut r)?,
        loss_tc(&mut r)?,
        loss_lstm(&mut r)?,
    ])
}
