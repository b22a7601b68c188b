//! Experiment pipeline: scene and data, model training with an on-disk
//! artifact cache, and the ablation, comparison and scaling reports.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chartrack_core::autoencoder::{self, AutoencoderModel, TrainingCurve};
use chartrack_core::channel::{ChannelSample, Region, Scene, TrajectorySampler};
use chartrack_core::direct::{self, DirectModel};
use chartrack_core::metrics::{nmse_db, spearman};
use chartrack_core::nn::Parameters;
use chartrack_core::rng;
use chartrack_core::signaling::{self, LsEstimator, NoiseSpec, PilotConfig};
use chartrack_core::tracker::{self, TrackerModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result, Stage};
use crate::formats::checkpoint;
use crate::formats::dataset::Dataset;

pub const DATASET_FILE: &str = "dataset.chds";

/// Scene, pilots, noise level and training channels for one configuration.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub config: ExperimentConfig,
    pub scene: Scene,
    pub region: Region,
    pub pilots: PilotConfig,
    pub noise_variance: f64,
    dataset: Vec<ChannelSample>,
}

impl Workbench {
    /// Builds the scene and pilots, then loads the training channels from
    /// `dataset_path` or generates them.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let dataset = match &config.dataset_path {
            Some(p) => Some(Dataset::load(p)?),
            None => None,
        };
        Self::with_dataset(config, dataset)
    }

    /// As [`Workbench::new`], with an explicit dataset overriding the config.
    pub fn with_dataset(config: ExperimentConfig, dataset: Option<Dataset>) -> Result<Self> {
        config.validate()?;
        let scene = Scene::new(config.scene_config()).map_err(|e| Error::Config(e.to_string()))?;
        let region = config.region();
        region.validate().map_err(|e| Error::Config(e.to_string()))?;
        let samples = match dataset {
            Some(d) => {
                if (d.nb, d.nu) != (config.nb(), config.nu()) {
                    return Err(Error::Config(format!(
                        "dataset is {}x{}, config expects {}x{}",
                        d.nb,
                        d.nu,
                        config.nb(),
                        config.nu()
                    )));
                }
                if d.samples.len() < 2 {
                    return Err(Error::Config("dataset needs at least 2 samples".into()));
                }
                d.samples
            }
            None => scene.gen_dataset(&region, config.dataset_size).stage("dataset")?,
        };
        let p = &config.pilots;
        let pilots = signaling::make_pilots_with_amplitude(
            config.nb(),
            config.nu(),
            p.mb,
            p.mu,
            p.amplitude,
            config.stage_seed("pilots"),
        )
        .stage("pilots")?;
        let power = signaling::mean_signal_power(&pilots, samples.iter().map(|s| &s.h)).stage("pilots")?;
        let noise = NoiseSpec::from_snr(config.snr_db, power, 0).stage("noise")?;
        Ok(Self {
            config,
            scene,
            region,
            pilots,
            noise_variance: noise.variance,
            dataset: samples,
        })
    }

    pub fn dataset(&self) -> &[ChannelSample] {
        &self.dataset
    }

    pub fn dataset_file(&self) -> Dataset {
        Dataset {
            nb: self.config.nb(),
            nu: self.config.nu(),
            carrier: self.config.scene.carrier_hz,
            samples: self.dataset.clone(),
        }
    }

    pub fn eval_trajectory(&self) -> Result<Vec<ChannelSample>> {
        let t = &self.config.trajectory;
        self.scene
            .gen_trajectory(&self.region, t.start, t.velocity, t.steps, t.dt)
            .map_err(|e| Error::Config(format!("evaluation trajectory: {e}")))
    }

    pub fn training_trajectories(&self) -> Result<Vec<Vec<ChannelSample>>> {
        let c = &self.config;
        let sampler = TrajectorySampler {
            count: c.training.count,
            steps: c.trajectory.steps,
            dt: c.trajectory.dt,
            min_speed: c.training.min_speed,
            max_speed: c.training.max_speed,
            seed: c.stage_seed("training-trajectories"),
        };
        self.scene
            .random_trajectories(&self.region, &sampler)
            .map_err(|e| Error::Config(format!("training trajectories: {e}")))
    }

    /// Flattened noisy observations of `trajectory`, shared by every method.
    pub fn eval_observations(&self, trajectory: &[ChannelSample]) -> Result<Vec<Vec<f64>>> {
        let mut r = rng::stream(self.config.stage_seed("eval-noise"));
        tracker::observe_sequence(trajectory.iter().map(|s| &s.h), &self.pilots, self.noise_variance, &mut r)
            .stage("observe")
    }

    fn training_noise(&self) -> NoiseSpec {
        NoiseSpec {
            variance: self.noise_variance,
            rng_seed: self.config.stage_seed("training-noise"),
        }
    }

    /// Initial autoencoder weights, shared by every distance weight so that
    /// strategies differ only in the objective.
    pub fn init_autoencoder(&self) -> Result<AutoencoderModel> {
        let a = &self.config.autoencoder;
        AutoencoderModel::init(
            self.config.nb(),
            self.config.nu(),
            &a.encoder_widths,
            a.latent,
            &a.decoder_widths,
            &mut rng::stream(self.config.stage_seed("autoencoder-init")),
        )
        .stage("autoencoder")
    }

    pub fn train_autoencoder(&self, lambda: f64) -> Result<(AutoencoderModel, TrainingCurve)> {
        autoencoder::train_autoencoder(self.init_autoencoder()?, &self.dataset, &self.config.ae_hyper(lambda))
            .stage("train-autoencoder")
    }

    pub fn init_tracker(&self) -> Result<TrackerModel> {
        TrackerModel::init(
            self.config.tracker_dims(),
            &mut rng::stream(self.config.stage_seed("tracker-init")),
        )
        .stage("tracker")
    }

    pub fn train_tracker(
        &self,
        ae: &AutoencoderModel,
        trajectories: &[Vec<ChannelSample>],
    ) -> Result<(TrackerModel, Vec<f64>)> {
        let seqs = tracker::build_sequences(
            trajectories,
            ae,
            &self.pilots,
            &self.training_noise(),
            self.config.trajectory.steps,
        )
        .stage("train-tracker")?;
        tracker::train_tracker(self.init_tracker()?, &seqs, &self.config.tracker_hyper()).stage("train-tracker")
    }

    pub fn init_direct(&self) -> Result<DirectModel> {
        DirectModel::init(
            self.config.tracker_dims(),
            self.config.direct.head_width,
            self.config.nb(),
            self.config.nu(),
            &mut rng::stream(self.config.stage_seed("direct-init")),
        )
        .stage("direct")
    }

    pub fn train_direct(&self, trajectories: &[Vec<ChannelSample>]) -> Result<(DirectModel, Vec<f64>)> {
        let d = &self.config.direct;
        let seqs = direct::build_direct_sequences(
            trajectories,
            &self.pilots,
            &self.training_noise(),
            self.config.trajectory.steps,
        )
        .stage("train-direct")?;
        direct::train_direct(
            self.init_direct()?,
            &seqs,
            d.learning_rate,
            d.epochs,
            d.batch_size,
            self.config.stage_seed("direct"),
        )
        .stage("train-direct")
    }

    pub fn param_counts(&self) -> Result<ParamCounts> {
        Ok(ParamCounts {
            bs_array: self.config.scene.bs_array,
            autoencoder: self.init_autoencoder()?.num_params(),
            tracker: self.init_tracker()?.num_params(),
            direct: self.init_direct()?.num_params(),
        })
    }
}

/// Trained models cached under an output directory. Each checkpoint has a
/// JSON sidecar; a sidecar whose fingerprint differs from the current
/// configuration marks the checkpoint as stale.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSidecar {
    pub nb: usize,
    pub nu: usize,
    pub encoder_widths: Vec<usize>,
    pub latent: usize,
    pub decoder_widths: Vec<usize>,
    pub lambda_tc: f64,
    pub perturb_std: f64,
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSidecar {
    pub obs_dim: usize,
    pub latent: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_width: usize,
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub pilot_seed: u64,
    pub obs_scale: f64,
    pub fingerprint: String,
}

/// Stable digest of the config sections that influence a stage.
fn fingerprint(parts: &[Value]) -> String {
    let mut h = DefaultHasher::new();
    for p in parts {
        p.to_string().hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

fn ae_fingerprint(c: &ExperimentConfig, lambda: f64) -> String {
    fingerprint(&[
        json!(c.seed),
        json!(c.scene),
        json!(c.region),
        json!(c.dataset_size),
        json!(c.dataset_path),
        json!(c.autoencoder),
        json!(lambda),
    ])
}

fn tracker_fingerprint(c: &ExperimentConfig, lambda: f64) -> String {
    fingerprint(&[
        json!(ae_fingerprint(c, lambda)),
        json!(c.trajectory),
        json!(c.training),
        json!(c.pilots),
        json!(c.snr_db),
        json!(c.tracker),
    ])
}

/// File stem for the autoencoder trained with distance weight `lambda`.
pub fn ae_tag(lambda: f64) -> String {
    if lambda == 0.0 {
        "ae_notc".into()
    } else {
        format!("ae_tc_{lambda}")
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.column() as u64, e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializes") + "\n"))
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dir.join(DATASET_FILE)
    }

    /// Cached dataset file, if present and no `dataset_path` overrides it.
    pub fn workbench(&self, config: ExperimentConfig) -> Result<Workbench> {
        let cached = self.dataset_path();
        if config.dataset_path.is_none() && cached.is_file() {
            return Workbench::with_dataset(config, Some(Dataset::load(&cached)?));
        }
        Workbench::new(config)
    }

    pub fn autoencoder(&self, wb: &Workbench, lambda: f64) -> Result<AutoencoderModel> {
        let tag = ae_tag(lambda);
        let (ckpt, side) = (self.dir.join(format!("{tag}.nnck")), self.dir.join(format!("{tag}.json")));
        let c = &wb.config;
        let want = AutoencoderSidecar {
            nb: c.nb(),
            nu: c.nu(),
            encoder_widths: c.autoencoder.encoder_widths.clone(),
            latent: c.autoencoder.latent,
            decoder_widths: c.autoencoder.decoder_widths.clone(),
            lambda_tc: lambda,
            perturb_std: c.autoencoder.perturb_std,
            seed: c.ae_hyper(lambda).seed,
            fingerprint: ae_fingerprint(c, lambda),
        };
        if ckpt.is_file() && side.is_file() && read_json::<AutoencoderSidecar>(&side)? == want {
            let mut m = wb.init_autoencoder()?;
            checkpoint::load_into(&mut m, &ckpt)?;
            return Ok(m);
        }
        let (m, curve) = wb.train_autoencoder(lambda)?;
        checkpoint::save(&m, &ckpt)?;
        write_json(&side, &want)?;
        let mut csv = String::from("epoch,loss_ci,loss_tc,total\n");
        for (i, p) in curve.epochs.iter().enumerate() {
            writeln!(csv, "{i},{},{},{}", p.ci, p.tc, p.total).unwrap();
        }
        write_text(&self.dir.join(format!("{tag}_curve.csv")), &csv)?;
        Ok(m)
    }

    pub fn tracker(
        &self,
        wb: &Workbench,
        lambda: f64,
        ae: &AutoencoderModel,
        trajectories: &[Vec<ChannelSample>],
    ) -> Result<TrackerModel> {
        let tag = format!("tracker_{}", ae_tag(lambda));
        let (ckpt, side) = (self.dir.join(format!("{tag}.nnck")), self.dir.join(format!("{tag}.json")));
        let c = &wb.config;
        let d = c.tracker_dims();
        let mut want = TrackerSidecar {
            obs_dim: d.obs_dim,
            latent: d.latent_dim,
            hidden: d.hidden,
            layers: d.layers,
            head_width: d.head_width,
            lambda_alpha: c.tracker.lambda_alpha,
            lambda_beta: c.tracker.lambda_beta,
            pilot_seed: c.stage_seed("pilots"),
            obs_scale: 0.0,
            fingerprint: tracker_fingerprint(c, lambda),
        };
        if ckpt.is_file() && side.is_file() {
            let got: TrackerSidecar = read_json(&side)?;
            want.obs_scale = got.obs_scale;
            if got == want {
                let mut m = wb.init_tracker()?;
                checkpoint::load_into(&mut m, &ckpt)?;
                m.obs_scale = got.obs_scale;
                return Ok(m);
            }
        }
        let (m, curve) = wb.train_tracker(ae, trajectories)?;
        want.obs_scale = m.obs_scale;
        checkpoint::save(&m, &ckpt)?;
        write_json(&side, &want)?;
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in curve.iter().enumerate() {
            writeln!(csv, "{i},{l}").unwrap();
        }
        write_text(&self.dir.join(format!("{tag}_curve.csv")), &csv)?;
        Ok(m)
    }
}

/// Parameter counts per method at one base-station array size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub bs_array: [usize; 2],
    pub autoencoder: usize,
    pub tracker: usize,
    pub direct: usize,
}

/// Per-step NMSE in dB for each method over the evaluation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub nmse_ls: Vec<f64>,
    pub nmse_tc: Vec<f64>,
    pub nmse_notc: Vec<f64>,
    /// `None` when the direct baseline is disabled.
    pub nmse_direct: Option<Vec<f64>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ComparisonReport {
    pub const HEADER: &'static str = "t,nmse_ls,nmse_tc,nmse_notc,nmse_direct";

    pub fn len(&self) -> usize {
        self.nmse_ls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nmse_ls.is_empty()
    }

    pub fn means(&self) -> Value {
        json!({
            "nmse_ls": mean(&self.nmse_ls),
            "nmse_tc": mean(&self.nmse_tc),
            "nmse_notc": mean(&self.nmse_notc),
            "nmse_direct": self.nmse_direct.as_deref().map(mean),
        })
    }

    /// Disabled direct baseline columns read `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for t in 0..self.len() {
            let d = self.nmse_direct.as_ref().map_or(f64::NAN, |d| d[t]);
            writeln!(out, "{t},{},{},{},{d}", self.nmse_ls[t], self.nmse_tc[t], self.nmse_notc[t]).unwrap();
        }
        out
    }
}

/// Normalized latent distance curves of the two training strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub dist_no_tc: Vec<f64>,
    pub dist_tc: Vec<f64>,
}

impl AblationReport {
    pub const HEADER: &'static str = "t,dist_no_tc,dist_tc";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (t, (a, b)) in self.dist_no_tc.iter().zip(&self.dist_tc).enumerate() {
            writeln!(out, "{t},{a},{b}").unwrap();
        }
        out
    }

    /// Rank correlation of each curve with time.
    pub fn spearman(&self) -> Result<(f64, f64)> {
        let t: Vec<f64> = (0..self.dist_tc.len()).map(|t| t as f64).collect();
        Ok((
            spearman(&t, &self.dist_no_tc).stage("ablation")?,
            spearman(&t, &self.dist_tc).stage("ablation")?,
        ))
    }
}

fn nmse_series<'a>(
    estimates: impl IntoIterator<Item = chartrack_core::CMatrix>,
    truth: impl IntoIterator<Item = &'a ChannelSample>,
) -> Result<Vec<f64>> {
    estimates
        .into_iter()
        .zip(truth)
        .map(|(e, s)| nmse_db(&e, &s.h).stage("nmse"))
        .collect()
}

/// Independent minimum-norm least squares at every step.
pub fn ls_series(wb: &Workbench, trajectory: &[ChannelSample], observations: &[Vec<f64>]) -> Result<Vec<f64>> {
    let est = LsEstimator::new(&wb.pilots).stage("ls")?;
    let (mb, mu) = (wb.pilots.mb(), wb.pilots.mu());
    let hats = observations
        .iter()
        .map(|y| {
            let y = signaling::unflatten_observation(y, mb, mu).stage("ls")?;
            est.estimate(&y).stage("ls")
        })
        .collect::<Result<Vec<_>>>()?;
    nmse_series(hats, trajectory)
}

pub fn run_ablation(wb: &Workbench, artifacts: &Artifacts) -> Result<AblationReport> {
    let traj = wb.eval_trajectory()?;
    let notc = artifacts.autoencoder(wb, 0.0)?;
    let tc = artifacts.autoencoder(wb, wb.config.autoencoder.lambda_tc)?;
    Ok(AblationReport {
        dist_no_tc: autoencoder::latent_smoothness(&notc, &traj).stage("ablation")?,
        dist_tc: autoencoder::latent_smoothness(&tc, &traj).stage("ablation")?,
    })
}

pub fn run_comparison(wb: &Workbench, artifacts: &Artifacts) -> Result<ComparisonReport> {
    let traj = wb.eval_trajectory()?;
    let obs = wb.eval_observations(&traj)?;
    let nmse_ls = ls_series(wb, &traj, &obs)?;
    let lambda = wb.config.autoencoder.lambda_tc;
    let train = wb.training_trajectories()?;
    let mut tracked = Vec::new();
    for l in [lambda, 0.0] {
        let ae = artifacts.autoencoder(wb, l)?;
        let tr = artifacts.tracker(wb, l, &ae, &train)?;
        let hats = tracker::infer_channels(&tr, &ae, &obs).stage("infer")?;
        tracked.push(nmse_series(hats, &traj)?);
    }
    let nmse_direct = if wb.config.direct.enabled {
        let (model, _) = wb.train_direct(&train)?;
        Some(nmse_series(model.infer(&obs).stage("infer-direct")?, &traj)?)
    } else {
        None
    };
    let nmse_notc = tracked.pop().expect("two runs");
    let nmse_tc = tracked.pop().expect("two runs");
    Ok(ComparisonReport {
        nmse_ls,
        nmse_tc,
        nmse_notc,
        nmse_direct,
    })
}

/// Comparison reports and parameter counts per base-station array.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub runs: Vec<(ParamCounts, ComparisonReport)>,
}

impl ScalingReport {
    pub const HEADER: &'static str = "bs_rows,bs_cols,nb,autoencoder,tracker,direct";

    pub fn parameters_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (p, _) in &self.runs {
            let [r, c] = p.bs_array;
            writeln!(out, "{r},{c},{},{},{},{}", r * c, p.autoencoder, p.tracker, p.direct).unwrap();
        }
        out
    }
}

pub fn scaling_dir(bs_array: [usize; 2]) -> String {
    format!("bs_{}x{}", bs_array[0], bs_array[1])
}

/// Runs the comparison once per configured base-station array, each in its
/// own subdirectory of `out`.
pub fn run_scaling(config: &ExperimentConfig, out: &Path) -> Result<ScalingReport> {
    let mut runs = Vec::new();
    for &bs in &config.scaling.bs_arrays {
        let cfg = config.with_bs_array(bs);
        let sub = out.join(scaling_dir(bs));
        let artifacts = Artifacts::new(&sub);
        let wb = artifacts.workbench(cfg)?;
        let report = run_comparison(&wb, &artifacts)?;
        write_text(&sub.join("comparison.csv"), &report.to_csv())?;
        runs.push((wb.param_counts()?, report));
    }
    Ok(ScalingReport { runs })
}

/// Writes `manifest.json` with the resolved config, version and outputs.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    started: Instant,
    results: Value,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": version_string(),
        "config": config,
        "runtime_seconds": started.elapsed().as_secs_f64(),
        "results": results,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Package version plus the git revision of the working directory when
/// available.
pub fn version_string() -> String {
    let rev = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    format!("chartrack {} (git {rev})", env!("CARGO_PKG_VERSION"))
}

pub(crate) fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
