//! Multipath channel synthesis between UE positions and base stations.
//!
//! The environment is a fixed field of point scatterers. Each UE-BS link is
//! the LOS ray plus one single-bounce ray per scatterer, all with free-space
//! spreading; the bounced rays carry an extra excess loss and a per-scatterer
//! reflection coefficient. The CSI of a link is the sum over rays of the
//! OFDM frequency response at the pilot subcarriers times the ULA steering
//! vector for the ray's angle of arrival.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{Point, ScenarioConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// LOS blockage probability at distance `r`, `1 - 0.95^(r / 10)`.
pub fn los_blockage_prob(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!(
            "blockage distance must be non-negative, got {r}"
        )));
    }
    Ok(-(r * 0.95f64.ln() / 10.0).exp_m1())
}

/// Free-space amplitude gain `lambda / (4 pi d)`.
pub fn free_space_gain(wavelength_m: f64, distance_m: f64) -> f64 {
    wavelength_m / (4.0 * PI * distance_m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub delay_s: f64,
    pub complex_gain: Complex64,
    pub aoa_rad: f64,
    pub is_los: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub ue_bs_distance_m: f64,
}

impl PathSet {
    pub fn los(&self) -> Option<&Path> {
        self.paths.iter().find(|p| p.is_los)
    }

    pub fn has_los(&self) -> bool {
        self.los().is_some()
    }
}

/// Channel of one BS for one UE position. Row `m` holds the `n_rx` antenna
/// responses at pilot subcarrier `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    n_sc: usize,
    n_rx: usize,
    entries: Vec<Complex64>,
}

impl CsiMatrix {
    pub fn zeros(n_sc: usize, n_rx: usize) -> Self {
        Self {
            n_sc,
            n_rx,
            entries: vec![Complex64::new(0.0, 0.0); n_sc * n_rx],
        }
    }

    pub fn from_entries(n_sc: usize, n_rx: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != n_sc * n_rx {
            return Err(Error::Shape(format!(
                "{} entries for a {n_sc}x{n_rx} CSI matrix",
                entries.len()
            )));
        }
        Ok(Self {
            n_sc,
            n_rx,
            entries,
        })
    }

    pub fn n_sc(&self) -> usize {
        self.n_sc
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn get(&self, m: usize, a: usize) -> Complex64 {
        self.entries[m * self.n_rx + a]
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.entries[m * self.n_rx..(m + 1) * self.n_rx]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Entrywise difference, `self - other`.
    pub fn sub(&self, other: &CsiMatrix) -> Result<CsiMatrix> {
        self.check_shape(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(CsiMatrix {
            entries,
            ..*self
        })
    }

    pub fn add(&self, other: &CsiMatrix) -> Result<CsiMatrix> {
        self.check_shape(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(CsiMatrix {
            entries,
            ..*self
        })
    }

    /// Round every entry to binary32 precision, the storage precision of
    /// dataset files.
    pub fn quantized(&self) -> CsiMatrix {
        let entries = self
            .entries
            .iter()
            .map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64))
            .collect();
        CsiMatrix {
            entries,
            ..*self
        }
    }

    fn check_shape(&self, other: &CsiMatrix) -> Result<()> {
        if (self.n_sc, self.n_rx) != (other.n_sc, other.n_rx) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_sc, self.n_rx, other.n_sc, other.n_rx
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Point,
    pub reflection: Complex64,
}

/// A scenario with its realized scatterer field.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    cfg: ScenarioConfig,
    scatterers: Vec<Scatterer>,
}

impl ChannelModel {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let env = &cfg.environment;
        let mut rng = seed::rng(seed::derive(env.seed, &[stream::ENVIRONMENT]));
        let count = rng.random_range(env.scatterers_min..=env.scatterers_max);
        let region = cfg.area.expanded(env.scatter_margin_m);
        let scatterers = (0..count)
            .map(|_| {
                let position = Point::new(
                    rng.random_range(region.x_min..=region.x_max),
                    rng.random_range(region.y_min..=region.y_max),
                );
                let loss_db = rng.random_range(0.0..=env.reflection_spread_db.max(0.0));
                let phase = rng.random_range(0.0..2.0 * PI);
                Scatterer {
                    position,
                    reflection: Complex64::from_polar(10f64.powf(-loss_db / 20.0), phase),
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            scatterers,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn scatterers(&self) -> &[Scatterer] {
        &self.scatterers
    }

    /// Rays from `ue` to BS `bs_index`: the LOS ray first, then one
    /// single-bounce ray per scatterer. `seed` drives the small-scale gain
    /// jitter only, so geometry is a pure function of position.
    pub fn generate_paths(&self, bs_index: usize, ue: Point, seed: u64) -> Result<PathSet> {
        let cfg = &self.cfg;
        let bs = *cfg.bs_positions.get(bs_index).ok_or_else(|| {
            Error::InvalidArgument(format!("BS index {bs_index} out of range"))
        })?;
        let r = bs.distance(&ue);
        if !(r > 1e-9) {
            return Err(Error::Domain(format!(
                "UE at ({}, {}) coincides with BS {bs_index}",
                ue.x, ue.y
            )));
        }
        let env = &cfg.environment;
        let lambda = cfg.wavelength_m();
        let mut rng = seed::rng(seed);
        let mut jitter = || -> f64 {
            if env.gain_jitter_db > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                10f64.powf(env.gain_jitter_db * z / 20.0)
            } else {
                1.0
            }
        };
        let carrier = |delay: f64| Complex64::from_polar(1.0, -2.0 * PI * cfg.carrier_hz * delay);

        let los_delay = r / SPEED_OF_LIGHT;
        let los_amp = free_space_gain(lambda, r);
        let mut paths = Vec::with_capacity(self.scatterers.len() + 1);
        paths.push(Path {
            delay_s: los_delay,
            complex_gain: carrier(los_delay) * los_amp,
            aoa_rad: bs.azimuth_to(&ue),
            is_los: true,
        });

        let bound = los_amp * 10f64.powf(-env.los_nlos_ratio_db / 20.0);
        let excess = 10f64.powf(-env.nlos_excess_loss_db / 20.0);
        for s in &self.scatterers {
            let length = ue.distance(&s.position) + s.position.distance(&bs);
            let delay = length / SPEED_OF_LIGHT;
            let amp = free_space_gain(lambda, length) * excess * s.reflection.norm() * jitter();
            // strictly below the LOS-to-NLOS bound
            let amp = if amp >= bound { bound * 0.999 } else { amp };
            let phase = s.reflection.arg();
            paths.push(Path {
                delay_s: delay.max(los_delay),
                complex_gain: carrier(delay) * Complex64::from_polar(amp, phase),
                aoa_rad: bs.azimuth_to(&s.position),
                is_los: false,
            });
        }
        Ok(PathSet {
            paths,
            ue_bs_distance_m: r,
        })
    }
}

/// Frequency-domain CSI of a ray set at the pilot subcarriers of `cfg`,
/// seen by the ULA of BS `bs_index`.
pub fn paths_to_csi(paths: &PathSet, cfg: &ScenarioConfig, bs_index: usize) -> Result<CsiMatrix> {
    if paths.paths.is_empty() {
        return Err(Error::InvalidArgument("empty path set".into()));
    }
    let orientation = *cfg.bs_orientations.get(bs_index).ok_or_else(|| {
        Error::InvalidArgument(format!("BS index {bs_index} out of range"))
    })?;
    let n_sc = cfg.n_sc_used();
    let n_rx = cfg.n_rx;
    let freqs: Vec<f64> = (0..n_sc).map(|m| cfg.pilot_frequency_hz(m)).collect();
    let mut csi = CsiMatrix::zeros(n_sc, n_rx);
    let mut steering = vec![Complex64::new(0.0, 0.0); n_rx];
    for path in &paths.paths {
        let spatial = -2.0 * PI * cfg.antenna_spacing_wavelengths * (path.aoa_rad - orientation).sin();
        for (a, s) in steering.iter_mut().enumerate() {
            *s = Complex64::from_polar(1.0, spatial * a as f64);
        }
        for (m, f) in freqs.iter().enumerate() {
            let h = path.complex_gain * Complex64::from_polar(1.0, -2.0 * PI * f * path.delay_s);
            let row = &mut csi.entries[m * n_rx..(m + 1) * n_rx];
            for (e, s) in row.iter_mut().zip(&steering) {
                *e += h * s;
            }
        }
    }
    Ok(csi)
}

/// One Bernoulli(`p_block`) draw from `seed`.
pub fn blockage_draw(seed: u64, p_block: f64) -> bool {
    let u: f64 = seed::rng(seed).random();
    u < p_block
}

/// Remove the LOS ray with probability `p_block`.
pub fn apply_blockage(paths: &PathSet, seed: u64, p_block: f64) -> PathSet {
    if blockage_draw(seed, p_block) {
        PathSet {
            paths: paths.paths.iter().filter(|p| !p.is_los).copied().collect(),
            ue_bs_distance_m: paths.ue_bs_distance_m,
        }
    } else {
        paths.clone()
    }
}

/// Add circularly-symmetric complex Gaussian receiver noise.
pub fn add_noise(csi: &CsiMatrix, cfg: &ScenarioConfig, seed: u64) -> CsiMatrix {
    let var = cfg.noise_variance();
    if var == 0.0 {
        return csi.clone();
    }
    let sigma = (0.5 * var).sqrt();
    let mut rng = seed::rng(seed);
    let mut out = csi.clone();
    for e in out.entries.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *e += Complex64::new(sigma * re, sigma * im);
    }
    out
}
