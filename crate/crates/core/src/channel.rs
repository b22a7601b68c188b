//! Multipath channel synthesis.
//!
//! Channels follow the sparse ray model
//! `H = √(N_B N_U / L) Σ ρ_ℓ a_B(φ_ℓ) a_U(θ_ℓ)ᴴ` with uniform planar arrays at
//! both ends. A [`Scene`] turns a user position into path parameters with a
//! single-bounce geometric model: one line-of-sight path plus one path per
//! point scatterer. Small moves of the user produce small changes in every
//! path angle and gain, which is the spatial continuity the latent tracker
//! depends on.
//!
//! Frames: the base-station array faces `+x`; the user array faces `-x`.
//! Azimuth is measured in the array's horizontal plane from its broadside,
//! elevation from that plane.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::linalg::CMatrix;
use crate::rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("array geometry must have rows, cols >= 1 and spacing > 0")]
    InvalidGeometry,
    #[error("invalid scene: {0}")]
    InvalidScene(&'static str),
    #[error("channel needs at least one path")]
    EmptyPaths,
    #[error("user position coincides with the base station or a scatterer")]
    CoincidentPositions,
    #[error("region is degenerate or inverted")]
    DegenerateRegion,
    #[error("requested an empty dataset or trajectory")]
    Empty,
    #[error("trajectory leaves the region at step {step}")]
    OutsideRegion { step: usize },
}

/// Uniform planar array, `rows × cols` elements spaced in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self, ChannelError> {
        let g = Self { rows, cols, spacing };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            spacing: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.rows == 0 || self.cols == 0 || !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(ChannelError::InvalidGeometry);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    /// Angles of a (not necessarily normalized) vector in the array frame
    /// whose broadside is `+x`.
    fn of(v: [f64; 3]) -> Self {
        let n = norm(v);
        let mut azimuth = libm::atan2(v[1], v[0]);
        if azimuth <= -PI {
            azimuth += 2.0 * PI;
        }
        let elevation = libm::asin((v[2] / n).clamp(-1.0, 1.0));
        Self { azimuth, elevation }
    }
}

/// One propagation path: complex gain, angle of arrival at the base station
/// and angle of departure at the user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParam {
    pub gain: Complex64,
    pub aoa: Direction,
    pub aod: Direction,
}

/// Array response over the `(m, n)` element grid, flattened column-major
/// (index `n·rows + m`).
///
/// Entry phase is `2π·spacing·(m·sin(az)·cos(el) + n·sin(el))`; every entry
/// has unit modulus.
pub fn steering(geom: &ArrayGeometry, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let u = libm::sin(azimuth) * libm::cos(elevation);
    let w = libm::sin(elevation);
    let k = 2.0 * PI * geom.spacing;
    let mut out = Vec::with_capacity(geom.len());
    for n in 0..geom.cols {
        for m in 0..geom.rows {
            let phase = k * (m as f64 * u + n as f64 * w);
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
    out
}

/// Sums the rank-one path contributions into an `N_B × N_U` channel.
///
/// The array responses enter with unit norm (the unit-modulus steering
/// vectors divided by `√N`), so a single path has `‖H‖²_F = N_B·N_U·|ρ|²`.
pub fn synth_channel(
    bs: &ArrayGeometry,
    ue: &ArrayGeometry,
    paths: &[PathParam],
) -> Result<CMatrix, ChannelError> {
    if paths.is_empty() {
        return Err(ChannelError::EmptyPaths);
    }
    let nb = bs.len();
    let nu = ue.len();
    // √(N_B·N_U/L) times the 1/√N_B and 1/√N_U response normalizations.
    let scale = 1.0 / libm::sqrt(paths.len() as f64);
    let mut h = CMatrix::zeros(nb, nu);
    for p in paths {
        let a_b = steering(bs, p.aoa.azimuth, p.aoa.elevation);
        let a_u = steering(ue, p.aod.azimuth, p.aod.elevation);
        let g = p.gain * scale;
        for (j, au) in a_u.iter().enumerate() {
            let coef = g * au.conj();
            for (i, ab) in a_b.iter().enumerate() {
                h[(i, j)] += ab * coef;
            }
        }
    }
    Ok(h)
}

/// Scene description; validated into a [`Scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub bs_geometry: ArrayGeometry,
    pub ue_geometry: ArrayGeometry,
    pub bs_position: [f64; 3],
    /// Total path count `L`: the line-of-sight path plus `L - 1` scatterers.
    pub num_paths: usize,
    pub scatterer_positions: Vec<[f64; 3]>,
    /// Carrier frequency in Hz.
    pub carrier: f64,
    /// Scales the single-bounce gain `1/(d₁ d₂)` relative to the direct
    /// path's `1/d`; units of meters.
    pub scatter_reflectivity: f64,
    /// Seeds the scatterers' reflection phases and the dataset jitter.
    pub rng_seed: u64,
}

/// Axis-aligned box of user positions. Axes with zero extent are allowed
/// (e.g. a fixed user height); a box with no extent at all is not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let ok = (0..3).all(|i| {
            self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i]
        });
        if !ok || self.extent().iter().all(|&e| e == 0.0) {
            return Err(ChannelError::DegenerateRegion);
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        const SLACK: f64 = 1e-9;
        (0..3).all(|i| p[i] >= self.min[i] - SLACK && p[i] <= self.max[i] + SLACK)
    }
}

/// A channel matrix and the user position it was observed at.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: CMatrix,
    pub position: [f64; 3],
}

/// Validated scene with precomputed scatterer reflection phases.
#[derive(Debug, Clone)]
pub struct Scene {
    config: SceneConfig,
    reflection: Vec<Complex64>,
    wavelength: f64,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self, ChannelError> {
        config.bs_geometry.validate()?;
        config.ue_geometry.validate()?;
        if config.num_paths == 0 {
            return Err(ChannelError::InvalidScene("num_paths must be >= 1"));
        }
        if config.scatterer_positions.len() + 1 < config.num_paths {
            return Err(ChannelError::InvalidScene(
                "need at least num_paths - 1 scatterers",
            ));
        }
        if !(config.carrier > 0.0) || !config.carrier.is_finite() {
            return Err(ChannelError::InvalidScene("carrier must be positive"));
        }
        if !config.scatter_reflectivity.is_finite() || config.scatter_reflectivity < 0.0 {
            return Err(ChannelError::InvalidScene("reflectivity must be >= 0"));
        }
        let finite = |p: &[f64; 3]| p.iter().all(|x| x.is_finite());
        if !finite(&config.bs_position) || !config.scatterer_positions.iter().all(finite) {
            return Err(ChannelError::InvalidScene("positions must be finite"));
        }
        let mut r = rng::stream(rng::derive_seed(config.rng_seed, "scatterer-phase"));
        let reflection = config
            .scatterer_positions
            .iter()
            .map(|_| Complex64::from_polar(1.0, r.random_range(0.0..2.0 * PI)))
            .collect();
        let wavelength = SPEED_OF_LIGHT / config.carrier;
        Ok(Self {
            config,
            reflection,
            wavelength,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn nb(&self) -> usize {
        self.config.bs_geometry.len()
    }

    pub fn nu(&self) -> usize {
        self.config.ue_geometry.len()
    }

    /// Geometric path parameters at user position `p`: line of sight first,
    /// then one single-bounce path per active scatterer.
    pub fn paths_from_position(&self, p: [f64; 3]) -> Result<Vec<PathParam>, ChannelError> {
        const MIN_DIST: f64 = 1e-9;
        let bs = self.config.bs_position;
        let k = 2.0 * PI / self.wavelength;

        let to_ue = sub(p, bs);
        let d = norm(to_ue);
        if d < MIN_DIST {
            return Err(ChannelError::CoincidentPositions);
        }
        let mut paths = Vec::with_capacity(self.config.num_paths);
        paths.push(PathParam {
            gain: Complex64::from_polar(1.0 / d, -k * d),
            aoa: Direction::of(to_ue),
            aod: ue_direction(sub(bs, p)),
        });

        for (s, refl) in self
            .config
            .scatterer_positions
            .iter()
            .zip(&self.reflection)
            .take(self.config.num_paths - 1)
        {
            let bs_to_s = sub(*s, bs);
            let ue_to_s = sub(*s, p);
            let d1 = norm(bs_to_s);
            let d2 = norm(ue_to_s);
            if d2 < MIN_DIST {
                return Err(ChannelError::CoincidentPositions);
            }
            let amp = self.config.scatter_reflectivity / (d1 * d2);
            paths.push(PathParam {
                gain: refl * Complex64::from_polar(amp, -k * (d1 + d2)),
                aoa: Direction::of(bs_to_s),
                aod: ue_direction(ue_to_s),
            });
        }
        Ok(paths)
    }

    pub fn channel_at(&self, p: [f64; 3]) -> Result<CMatrix, ChannelError> {
        let paths = self.paths_from_position(p)?;
        synth_channel(&self.config.bs_geometry, &self.config.ue_geometry, &paths)
    }

    pub fn sample_at(&self, p: [f64; 3]) -> Result<ChannelSample, ChannelError> {
        Ok(ChannelSample {
            h: self.channel_at(p)?,
            position: p,
        })
    }

    /// `k` samples on a seeded jittered grid over `region`. A single sample
    /// sits at the region's center.
    pub fn gen_dataset(&self, region: &Region, k: usize) -> Result<Vec<ChannelSample>, ChannelError> {
        region.validate()?;
        if k == 0 {
            return Err(ChannelError::Empty);
        }
        if k == 1 {
            return Ok(alloc::vec![self.sample_at(region.center())?]);
        }
        let positions = jittered_grid(region, k, rng::derive_seed(self.config.rng_seed, "dataset"));
        positions.into_iter().map(|p| self.sample_at(p)).collect()
    }

    /// Linear motion `p(t) = start + t·dt·velocity` for `t = 0..steps`.
    pub fn gen_trajectory(
        &self,
        region: &Region,
        start: [f64; 3],
        velocity: [f64; 3],
        steps: usize,
        dt: f64,
    ) -> Result<Vec<ChannelSample>, ChannelError> {
        region.validate()?;
        if steps == 0 {
            return Err(ChannelError::Empty);
        }
        (0..steps)
            .map(|t| {
                let s = t as f64 * dt;
                let p = [
                    start[0] + s * velocity[0],
                    start[1] + s * velocity[1],
                    start[2] + s * velocity[2],
                ];
                if !region.contains(p) {
                    return Err(ChannelError::OutsideRegion { step: t });
                }
                self.sample_at(p)
            })
            .collect()
    }
}

/// Speed range and count of randomly placed training trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySampler {
    pub count: usize,
    pub steps: usize,
    pub dt: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub seed: u64,
}

/// Rejection attempts per trajectory before giving up.
const MAX_ATTEMPTS: usize = 10_000;

impl Scene {
    /// Linear trajectories with uniform random start in `region`, uniform
    /// random heading over the region's nonzero axes and uniform speed; each
    /// stays inside the region for all steps.
    pub fn random_trajectories(
        &self,
        region: &Region,
        sampler: &TrajectorySampler,
    ) -> Result<Vec<Vec<ChannelSample>>, ChannelError> {
        region.validate()?;
        if sampler.count == 0 || sampler.steps == 0 {
            return Err(ChannelError::Empty);
        }
        if !(sampler.min_speed >= 0.0 && sampler.max_speed >= sampler.min_speed) {
            return Err(ChannelError::InvalidScene("speed range must satisfy 0 <= min <= max"));
        }
        let ext = region.extent();
        let mut r = rng::stream(sampler.seed);
        let span = (sampler.steps - 1) as f64 * sampler.dt;
        let mut out = Vec::with_capacity(sampler.count);
        for _ in 0..sampler.count {
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let mut start = region.min;
                let mut dir = [0.0; 3];
                for i in 0..3 {
                    if ext[i] > 0.0 {
                        start[i] += ext[i] * r.random_range(0.0..1.0);
                        dir[i] = rng::normal(&mut r);
                    }
                }
                let n = norm(dir);
                let speed = if sampler.max_speed > sampler.min_speed {
                    r.random_range(sampler.min_speed..sampler.max_speed)
                } else {
                    sampler.min_speed
                };
                if n == 0.0 {
                    continue;
                }
                let v = [dir[0] / n * speed, dir[1] / n * speed, dir[2] / n * speed];
                let end = [start[0] + span * v[0], start[1] + span * v[1], start[2] + span * v[2]];
                if region.contains(end) {
                    found = Some((start, v));
                    break;
                }
            }
            let (start, v) = found.ok_or(ChannelError::InvalidScene(
                "could not fit a training trajectory inside the region",
            ))?;
            out.push(self.gen_trajectory(region, start, v, sampler.steps, sampler.dt)?);
        }
        Ok(out)
    }
}

/// Angles in the user array frame, which is the global frame rotated by π
/// about the vertical axis.
fn ue_direction(v: [f64; 3]) -> Direction {
    Direction::of([-v[0], -v[1], v[2]])
}

/// Grid over the axes with nonzero extent, cell counts proportional to the
/// extents, `k` cells picked evenly in raster order and jittered uniformly
/// within each cell.
fn jittered_grid(region: &Region, k: usize, seed: u64) -> Vec<[f64; 3]> {
    let ext = region.extent();
    let active: Vec<usize> = (0..3).filter(|&i| ext[i] > 0.0).collect();
    let vol: f64 = active.iter().map(|&i| ext[i]).product();
    let h = libm::pow(vol / k as f64, 1.0 / active.len() as f64);
    let mut counts = [1usize; 3];
    for &i in &active {
        counts[i] = libm::ceil(ext[i] / h).max(1.0) as usize;
    }
    let mut total: usize = counts.iter().product();
    // Rounding can leave too few cells for very elongated boxes.
    while total < k {
        let i = *active
            .iter()
            .max_by(|&&a, &&b| (ext[a] / counts[a] as f64).total_cmp(&(ext[b] / counts[b] as f64)))
            .expect("region has an active axis");
        counts[i] += 1;
        total = counts.iter().product();
    }

    let mut r = rng::stream(seed);
    (0..k)
        .map(|n| {
            let mut cell = ((n as u128 * total as u128) / k as u128) as usize;
            let mut p = region.min;
            for i in 0..3 {
                let idx = cell % counts[i];
                cell /= counts[i];
                if ext[i] > 0.0 {
                    let u: f64 = r.random_range(0.0..1.0);
                    p[i] = region.min[i] + (idx as f64 + u) * ext[i] / counts[i] as f64;
                }
            }
            p
        })
        .collect()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scene(num_paths: usize) -> Scene {
        Scene::new(SceneConfig {
            bs_geometry: ArrayGeometry::half_wavelength(4, 4),
            ue_geometry: ArrayGeometry::half_wavelength(2, 2),
            bs_position: [0.0, 0.0, 10.0],
            num_paths,
            scatterer_positions: vec![[30.0, 25.0, 5.0], [35.0, -20.0, 8.0], [60.0, 10.0, 12.0]],
            carrier: 3.5e9,
            scatter_reflectivity: 30.0,
            rng_seed: 11,
        })
        .unwrap()
    }

    fn region() -> Region {
        Region {
            min: [40.0, -5.0, 1.5],
            max: [45.0, 5.0, 1.5],
        }
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = ArrayGeometry::half_wavelength(3, 4);
        for z in steering(&g, 0.0, 0.0) {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let single = ArrayGeometry::half_wavelength(1, 1);
        assert_eq!(steering(&single, 1.1, -0.4), vec![Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn endfire_two_element_steering() {
        let g = ArrayGeometry::new(2, 1, 0.5).unwrap();
        let a = steering(&g, PI / 2.0, 0.0);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_is_unit_modulus() {
        let g = ArrayGeometry::half_wavelength(5, 3);
        for (az, el) in [(0.3, 0.2), (-2.0, 1.0), (3.0, -1.5)] {
            let a = steering(&g, az, el);
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
            let e: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert!((e - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_broadside_path_is_all_ones() {
        let bs = ArrayGeometry::half_wavelength(3, 2);
        let ue = ArrayGeometry::half_wavelength(2, 1);
        let path = PathParam {
            gain: Complex64::new(1.0, 0.0),
            aoa: Direction::default(),
            aod: Direction::default(),
        };
        let h = synth_channel(&bs, &ue, &[path]).unwrap();
        let expect = 1.0;
        assert!(h.as_slice().iter().all(|z| (z - expect).norm() < 1e-12));
    }

    #[test]
    fn single_path_energy() {
        let bs = ArrayGeometry::half_wavelength(4, 3);
        let ue = ArrayGeometry::half_wavelength(2, 2);
        let rho = Complex64::new(0.3, -0.7);
        let path = PathParam {
            gain: rho,
            aoa: Direction { azimuth: 0.4, elevation: -0.2 },
            aod: Direction { azimuth: -1.0, elevation: 0.5 },
        };
        let h = synth_channel(&bs, &ue, &[path]).unwrap();
        assert!((h.norm_sqr() - 48.0 * rho.norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn empty_paths_rejected() {
        let g = ArrayGeometry::half_wavelength(2, 2);
        assert_eq!(synth_channel(&g, &g, &[]), Err(ChannelError::EmptyPaths));
    }

    #[test]
    fn rank_is_at_most_path_count() {
        let s = scene(3);
        for l in 1..=3 {
            let paths = s.paths_from_position([42.0, 1.0, 1.5]).unwrap();
            let h = synth_channel(&s.config.bs_geometry, &s.config.ue_geometry, &paths[..l]).unwrap();
            let sv = h.svd().unwrap().s;
            assert!(sv[l..].iter().all(|&x| x < 1e-10 * sv[0]), "L={l}: {sv:?}");
        }
    }

    #[test]
    fn channel_is_linear_in_each_gain() {
        let s = scene(3);
        let (bs, ue) = (s.config.bs_geometry, s.config.ue_geometry);
        let paths = s.paths_from_position([43.0, -2.0, 1.5]).unwrap();
        let mut doubled = paths.clone();
        doubled[1].gain *= 2.0;
        let h = synth_channel(&bs, &ue, &paths).unwrap();
        let h2 = synth_channel(&bs, &ue, &doubled).unwrap();
        // H(2ρ₁) - H(ρ) equals the ρ₁ term alone, normalized with the same L.
        let mut only = paths.clone();
        for (i, p) in only.iter_mut().enumerate() {
            if i != 1 {
                p.gain = Complex64::new(0.0, 0.0);
            }
        }
        let term = synth_channel(&bs, &ue, &only).unwrap();
        let diff = h2.sub(&h).unwrap();
        assert!(diff.sub(&term).unwrap().frobenius_norm() < 1e-12 * term.frobenius_norm());
    }

    #[test]
    fn broadside_user_has_zero_line_of_sight_angles() {
        let s = scene(1);
        let p = s.paths_from_position([50.0, 0.0, 10.0]).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].aoa.azimuth.abs() < 1e-15 && p[0].aoa.elevation.abs() < 1e-15);
        assert!(p[0].aod.azimuth.abs() < 1e-15 && p[0].aod.elevation.abs() < 1e-15);
    }

    #[test]
    fn line_of_sight_gain_halves_with_distance() {
        let s = scene(1);
        let g1 = s.paths_from_position([20.0, 3.0, 4.0]).unwrap()[0].gain.norm();
        let g2 = s.paths_from_position([40.0, 6.0, -2.0]).unwrap()[0].gain.norm();
        assert!((g2 / g1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn paths_are_continuous_in_position() {
        let s = scene(4);
        let p = [42.0, 1.0, 1.5];
        let a = s.paths_from_position(p).unwrap();
        let b = s.paths_from_position([p[0] + 1e-4, p[1] - 1e-4, p[2]]).unwrap();
        let c = s.paths_from_position([p[0] + 2e-4, p[1] - 2e-4, p[2]]).unwrap();
        let dist = |x: &[PathParam], y: &[PathParam]| -> f64 {
            x.iter()
                .zip(y)
                .map(|(u, v)| {
                    (u.gain - v.gain).norm()
                        + (u.aoa.azimuth - v.aoa.azimuth).abs()
                        + (u.aoa.elevation - v.aoa.elevation).abs()
                        + (u.aod.azimuth - v.aod.azimuth).abs()
                        + (u.aod.elevation - v.aod.elevation).abs()
                })
                .sum()
        };
        let d1 = dist(&a, &b);
        let d2 = dist(&a, &c);
        assert!(d1 < 1e-3, "{d1}");
        // First order: doubling the step doubles the change.
        assert!((d2 / d1 - 2.0).abs() < 0.05, "{}", d2 / d1);
    }

    #[test]
    fn coincident_positions_rejected() {
        let s = scene(2);
        assert_eq!(
            s.paths_from_position([0.0, 0.0, 10.0]),
            Err(ChannelError::CoincidentPositions)
        );
        assert_eq!(
            s.paths_from_position([30.0, 25.0, 5.0]),
            Err(ChannelError::CoincidentPositions)
        );
    }

    #[test]
    fn scene_validation() {
        let mut cfg = scene(1).config.clone();
        cfg.num_paths = 5;
        assert!(matches!(Scene::new(cfg.clone()), Err(ChannelError::InvalidScene(_))));
        cfg.num_paths = 0;
        assert!(matches!(Scene::new(cfg), Err(ChannelError::InvalidScene(_))));
    }

    #[test]
    fn dataset_single_sample_at_center() {
        let d = scene(2).gen_dataset(&region(), 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].position, [42.5, 0.0, 1.5]);
    }

    #[test]
    fn dataset_is_reproducible_and_inside_region() {
        let s = scene(3);
        let a = s.gen_dataset(&region(), 200).unwrap();
        let b = s.gen_dataset(&region(), 200).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| region().contains(x.position)));
        // Grid coverage: every quarter of the box gets samples.
        for qx in 0..2 {
            for qy in 0..2 {
                let n = a
                    .iter()
                    .filter(|x| {
                        ((x.position[0] - 40.0) / 2.5) as usize == qx
                            && ((x.position[1] + 5.0) / 5.0) as usize == qy
                    })
                    .count();
                assert!(n > 30, "quadrant ({qx},{qy}) has {n}");
            }
        }
    }

    #[test]
    fn dataset_on_a_line_region() {
        let s = scene(2);
        let r = Region {
            min: [40.0, -3.0, 1.5],
            max: [60.0, -3.0, 1.5],
        };
        let d = s.gen_dataset(&r, 37).unwrap();
        assert_eq!(d.len(), 37);
        assert!(d.iter().all(|x| x.position[1] == -3.0 && r.contains(x.position)));
    }

    #[test]
    fn degenerate_region_rejected() {
        let s = scene(1);
        let point = Region {
            min: [40.0, 0.0, 1.5],
            max: [40.0, 0.0, 1.5],
        };
        assert_eq!(s.gen_dataset(&point, 3), Err(ChannelError::DegenerateRegion));
        let inverted = Region {
            min: [41.0, 0.0, 1.5],
            max: [40.0, 1.0, 1.5],
        };
        assert_eq!(s.gen_dataset(&inverted, 3), Err(ChannelError::DegenerateRegion));
        assert_eq!(s.gen_dataset(&region(), 0), Err(ChannelError::Empty));
    }

    #[test]
    fn trajectory_motion() {
        let s = scene(3);
        let still = s.gen_trajectory(&region(), [41.0, 0.0, 1.5], [0.0; 3], 5, 0.1).unwrap();
        assert!(still.windows(2).all(|w| w[0] == w[1]));

        let t = s
            .gen_trajectory(&region(), [41.0, -4.0, 1.5], [0.3, 0.4, 0.0], 100, 0.1)
            .unwrap();
        assert_eq!(t.len(), 100);
        for w in t.windows(2) {
            let d = norm(sub(w[1].position, w[0].position));
            assert!((d - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_leaving_region_fails() {
        let s = scene(1);
        let err = s
            .gen_trajectory(&region(), [44.0, 0.0, 1.5], [1.0, 0.0, 0.0], 30, 0.1)
            .unwrap_err();
        assert_eq!(err, ChannelError::OutsideRegion { step: 11 });
    }

    #[test]
    fn random_trajectories_stay_inside() {
        let s = scene(2);
        let sampler = TrajectorySampler {
            count: 5,
            steps: 20,
            dt: 0.1,
            min_speed: 0.5,
            max_speed: 1.5,
            seed: 3,
        };
        let t = s.random_trajectories(&region(), &sampler).unwrap();
        assert_eq!(t.len(), 5);
        for traj in &t {
            assert_eq!(traj.len(), 20);
            assert!(traj.iter().all(|x| region().contains(x.position) && x.position[2] == 1.5));
            let step = norm(sub(traj[1].position, traj[0].position));
            assert!((0.05 - 1e-12..=0.15 + 1e-12).contains(&step));
        }
        assert_eq!(t, s.random_trajectories(&region(), &sampler).unwrap());
        let too_fast = TrajectorySampler {
            min_speed: 100.0,
            max_speed: 100.0,
            ..sampler
        };
        assert!(s.random_trajectories(&region(), &too_fast).is_err());
    }

    #[test]
    fn trajectory_change_is_first_order_in_step() {
        // Halving dt halves the per-step channel change to first order.
        let s = Scene::new(SceneConfig {
            carrier: 1e8,
            ..scene(3).config.clone()
        })
        .unwrap();
        let step_change = |dt: f64| {
            let t = s
                .gen_trajectory(&region(), [41.0, -4.0, 1.5], [0.0, 1.0, 0.0], 2, dt)
                .unwrap();
            t[1].h.sub(&t[0].h).unwrap().frobenius_norm() / t[0].h.frobenius_norm()
        };
        let full = step_change(1e-3);
        let half = step_change(5e-4);
        assert!(full < 1e-2);
        assert!((full / half - 2.0).abs() < 0.01, "{}", full / half);
    }
}
