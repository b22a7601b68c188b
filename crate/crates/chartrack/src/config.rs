//! JSON experiment configuration.
//!
//! Every field has a default, so a config file only lists what it changes.
//! Unknown keys are rejected. Stage seeds are derived from `seed` by tag.

use std::path::{Path, PathBuf};

use chartrack_core::autoencoder::AeHyper;
use chartrack_core::channel::{ArrayGeometry, Region, SceneConfig};
use chartrack_core::rng::derive_seed;
use chartrack_core::tracker::{TrackerDims, TrackerHyper};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub region: RegionSpec,
    /// Number of autoencoder training channels drawn from the region.
    pub dataset_size: usize,
    /// Load the training channels from this dataset file instead.
    pub dataset_path: Option<PathBuf>,
    pub trajectory: TrajectorySpec,
    pub training: TrainingSpec,
    pub pilots: PilotSpec,
    /// Ratio of mean noiseless observation power to noise variance.
    pub snr_db: f64,
    pub autoencoder: AutoencoderSpec,
    pub tracker: TrackerSpec,
    pub direct: DirectSpec,
    pub scaling: ScalingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Base-station array as `[rows, cols]`, half-wavelength spaced.
    pub bs_array: [usize; 2],
    pub ue_array: [usize; 2],
    pub bs_position: [f64; 3],
    pub scatterers: Vec<[f64; 3]>,
    /// Path count including line of sight; defaults to one per scatterer
    /// plus one.
    pub num_paths: Option<usize>,
    pub carrier_hz: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// The evaluation trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub start: [f64; 3],
    pub velocity: [f64; 3],
    pub dt: f64,
    pub steps: usize,
}

/// Random tracker training trajectories; they share the evaluation
/// trajectory's step count and interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub count: usize,
    pub min_speed: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PilotSpec {
    /// Combiner count at the base station.
    pub mb: usize,
    /// Precoder count at the user.
    pub mu: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSpec {
    pub latent: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub lambda_tc: f64,
    pub perturb_std: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSpec {
    pub hidden: usize,
    pub layers: usize,
    pub head_width: usize,
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectSpec {
    pub enabled: bool,
    pub head_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSpec {
    pub bs_arrays: Vec<[usize; 2]>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scene: SceneSpec::default(),
            region: RegionSpec {
                min: [40.0, -5.0, 1.5],
                max: [45.0, 5.0, 1.5],
            },
            dataset_size: 1000,
            dataset_path: None,
            trajectory: TrajectorySpec::default(),
            training: TrainingSpec::default(),
            pilots: PilotSpec::default(),
            snr_db: 20.0,
            autoencoder: AutoencoderSpec::default(),
            tracker: TrackerSpec::default(),
            direct: DirectSpec::default(),
            scaling: ScalingSpec::default(),
        }
    }
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            bs_array: [8, 8],
            ue_array: [2, 2],
            bs_position: [0.0, 0.0, 10.0],
            scatterers: vec![[30.0, 25.0, 5.0], [35.0, -20.0, 8.0], [60.0, 10.0, 12.0]],
            num_paths: None,
            carrier_hz: 3.5e9,
            reflectivity: 30.0,
        }
    }
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            start: [41.0, -4.0, 1.5],
            velocity: [0.0, 1.0, 0.0],
            dt: 0.08,
            steps: 100,
        }
    }
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            count: 200,
            min_speed: 0.5,
            max_speed: 1.5,
        }
    }
}

impl Default for PilotSpec {
    fn default() -> Self {
        Self {
            mb: 16,
            mu: 4,
            amplitude: 1.0,
        }
    }
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        let h = AeHyper::default();
        Self {
            latent: 16,
            encoder_widths: vec![256, 128],
            decoder_widths: vec![128, 256],
            lambda_tc: h.lambda_tc,
            perturb_std: h.perturb_std,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            epochs: 100,
            patience: h.patience,
        }
    }
}

impl Default for TrackerSpec {
    fn default() -> Self {
        let h = TrackerHyper::default();
        let d = TrackerDims::new(1, 1);
        Self {
            hidden: d.hidden,
            layers: d.layers,
            head_width: d.head_width,
            lambda_alpha: h.lambda_alpha,
            lambda_beta: h.lambda_beta,
            learning_rate: h.learning_rate,
            epochs: 60,
            batch_size: h.batch_size,
            patience: h.patience,
        }
    }
}

impl Default for DirectSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            head_width: chartrack_core::direct::DEFAULT_HEAD_WIDTH,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 16,
        }
    }
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            bs_arrays: vec![[8, 8], [16, 16]],
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative `dataset_path`s resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(p) = &cfg.dataset_path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset_path = Some(base.join(p));
            }
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Parses and validates counts and ranges; does not touch the filesystem.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check_paths(&self) -> Result<()> {
        match &self.dataset_path {
            Some(p) if !p.is_file() => Err(Error::Config(format!("dataset_path {} does not exist", p.display()))),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let s = &self.scene;
        if s.bs_array.contains(&0) || s.ue_array.contains(&0) {
            return fail("array dimensions must be >= 1");
        }
        if self.scaling.bs_arrays.iter().any(|a| a.contains(&0)) {
            return fail("scaling.bs_arrays dimensions must be >= 1");
        }
        if self.num_paths() == 0 || self.num_paths() > s.scatterers.len() + 1 {
            return fail("scene.num_paths must be between 1 and scatterers + 1");
        }
        if self.dataset_size < 2 {
            return fail("dataset_size must be >= 2");
        }
        if self.trajectory.steps < 2 || !(self.trajectory.dt > 0.0) {
            return fail("trajectory needs steps >= 2 and dt > 0");
        }
        let t = &self.training;
        if t.count == 0 || !(t.min_speed >= 0.0 && t.max_speed >= t.min_speed) {
            return fail("training needs count >= 1 and 0 <= min_speed <= max_speed");
        }
        if self.pilots.mb == 0 || self.pilots.mu == 0 || !(self.pilots.amplitude > 0.0) {
            return fail("pilots need mb, mu >= 1 and amplitude > 0");
        }
        if !self.snr_db.is_finite() {
            return fail("snr_db must be finite");
        }
        let a = &self.autoencoder;
        if a.latent == 0 || a.encoder_widths.contains(&0) || a.decoder_widths.contains(&0) {
            return fail("autoencoder widths and latent must be >= 1");
        }
        if a.epochs == 0 {
            return fail("autoencoder.epochs must be >= 1");
        }
        self.ae_hyper(a.lambda_tc).validate().map_err(|e| Error::Config(e.to_string()))?;
        let k = &self.tracker;
        if k.hidden == 0 || k.layers == 0 || k.head_width == 0 || k.epochs == 0 {
            return fail("tracker sizes and epochs must be >= 1");
        }
        self.tracker_hyper().validate().map_err(|e| Error::Config(e.to_string()))?;
        let d = &self.direct;
        if d.enabled && (d.head_width == 0 || d.epochs == 0 || d.batch_size == 0 || !(d.learning_rate > 0.0)) {
            return fail("direct baseline needs head_width, epochs, batch_size >= 1 and learning_rate > 0");
        }
        Ok(())
    }

    pub fn num_paths(&self) -> usize {
        self.scene.num_paths.unwrap_or(self.scene.scatterers.len() + 1)
    }

    pub fn nb(&self) -> usize {
        self.scene.bs_array[0] * self.scene.bs_array[1]
    }

    pub fn nu(&self) -> usize {
        self.scene.ue_array[0] * self.scene.ue_array[1]
    }

    pub fn stage_seed(&self, tag: &str) -> u64 {
        derive_seed(self.seed, tag)
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        SceneConfig {
            bs_geometry: ArrayGeometry::half_wavelength(s.bs_array[0], s.bs_array[1]),
            ue_geometry: ArrayGeometry::half_wavelength(s.ue_array[0], s.ue_array[1]),
            bs_position: s.bs_position,
            num_paths: self.num_paths(),
            scatterer_positions: s.scatterers.clone(),
            carrier: s.carrier_hz,
            scatter_reflectivity: s.reflectivity,
            rng_seed: self.stage_seed("scene"),
        }
    }

    pub fn region(&self) -> Region {
        Region {
            min: self.region.min,
            max: self.region.max,
        }
    }

    /// Autoencoder hyperparameters with the distance weight set to `lambda`.
    pub fn ae_hyper(&self, lambda: f64) -> AeHyper {
        let a = &self.autoencoder;
        AeHyper {
            lambda_tc: lambda,
            perturb_std: a.perturb_std,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            epochs: a.epochs,
            patience: a.patience,
            seed: self.stage_seed(&format!("autoencoder-{lambda}")),
        }
    }

    pub fn tracker_dims(&self) -> TrackerDims {
        TrackerDims {
            obs_dim: 2 * self.pilots.mb * self.pilots.mu,
            latent_dim: self.autoencoder.latent,
            hidden: self.tracker.hidden,
            layers: self.tracker.layers,
            head_width: self.tracker.head_width,
        }
    }

    pub fn tracker_hyper(&self) -> TrackerHyper {
        let k = &self.tracker;
        TrackerHyper {
            lambda_alpha: k.lambda_alpha,
            lambda_beta: k.lambda_beta,
            learning_rate: k.learning_rate,
            epochs: k.epochs,
            batch_size: k.batch_size,
            patience: k.patience,
            seed: self.stage_seed("tracker"),
        }
    }

    /// The same experiment with a different base-station array.
    pub fn with_bs_array(&self, bs_array: [usize; 2]) -> Self {
        let mut c = self.clone();
        c.scene.bs_array = bs_array;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let e = ExperimentConfig::from_json(r#"{"sead": 3}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(ExperimentConfig::from_json(r#"{"pilots": {"mb": 4, "mx": 1}}"#).is_err());
    }

    #[test]
    fn zero_counts_rejected() {
        for bad in [
            r#"{"pilots": {"mb": 0}}"#,
            r#"{"autoencoder": {"latent": 0}}"#,
            r#"{"tracker": {"layers": 0}}"#,
            r#"{"dataset_size": 1}"#,
            r#"{"scene": {"num_paths": 5}}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn missing_dataset_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"dataset_path": "nope.chds"}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn stage_seeds_differ() {
        let c = ExperimentConfig::default();
        assert_ne!(c.ae_hyper(0.0).seed, c.ae_hyper(0.1).seed);
        assert_ne!(c.stage_seed("scene"), c.stage_seed("pilots"));
    }
}
