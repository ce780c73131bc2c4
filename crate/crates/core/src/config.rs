//! Scenario configuration and its plain-text `key = value` file format.
//!
//! ```text
//! # desk profile
//! n_bs = 4
//! bs_positions = 0,-5; 20,25; 40,-5; 60,25
//! bs_orientations = auto
//! noise_figure_db = 2      # `off` disables receiver noise
//! ```
//!
//! Keys mirror the [`ScenarioConfig`] and [`EnvironmentModel`] fields; the
//! environment keys carry an `env.` prefix. All values are SI units
//! (meters, hertz, radians) except the dB/dBm quantities named as such.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Azimuth of `other` as seen from `self`, in radians.
    pub fn azimuth_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Length of the diagonal, the largest distance between two labels.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn expanded(&self, margin: f64) -> Rect {
        Rect {
            x_min: self.x_min - margin,
            y_min: self.y_min - margin,
            x_max: self.x_max + margin,
            y_max: self.y_max + margin,
        }
    }
}

/// Parameters of the geometric single-bounce scatterer model.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    /// Seed of the scatterer map. Fixed per environment, not per position.
    pub seed: u64,
    pub scatterers_min: usize,
    pub scatterers_max: usize,
    /// Scatterers are drawn uniformly in the area grown by this margin.
    pub scatter_margin_m: f64,
    /// Loss applied to every bounced path on top of free-space loss.
    pub nlos_excess_loss_db: f64,
    /// Per-scatterer reflection loss is uniform in `[0, spread]` dB.
    pub reflection_spread_db: f64,
    /// Each NLOS path is at least this many dB weaker than the LOS path.
    pub los_nlos_ratio_db: f64,
    /// Standard deviation of the per-call log-normal path gain jitter.
    pub gain_jitter_db: f64,
}

impl Default for EnvironmentModel {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            scatterers_min: 8,
            scatterers_max: 16,
            scatter_margin_m: 10.0,
            nlos_excess_loss_db: 10.0,
            reflection_spread_db: 10.0,
            los_nlos_ratio_db: 3.0,
            gain_jitter_db: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_bs: usize,
    /// Antennas per base station.
    pub n_rx: usize,
    /// OFDM FFT size.
    pub n_sc_total: usize,
    /// Reference-signal subcarrier spacing in subcarriers.
    pub sc_stride: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_floor_dbm_hz: f64,
    /// `f64::NEG_INFINITY` disables receiver noise.
    pub noise_figure_db: f64,
    pub area: Rect,
    pub bs_positions: Vec<Point>,
    /// Broadside azimuth of each ULA.
    pub bs_orientations: Vec<f64>,
    pub antenna_spacing_wavelengths: f64,
    pub environment: EnvironmentModel,
}

impl ScenarioConfig {
    /// Six BSs along a 200 m x 36 m street, 16-element ULAs, 3.5 GHz,
    /// 80 MHz over 1024 subcarriers with a pilot on every 10th.
    pub fn paper() -> Self {
        let area = Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 200.0,
            y_max: 36.0,
        };
        let bs_positions = vec![
            Point::new(0.0, -5.0),
            Point::new(40.0, 41.0),
            Point::new(80.0, -5.0),
            Point::new(120.0, 41.0),
            Point::new(160.0, -5.0),
            Point::new(200.0, 41.0),
        ];
        let bs_orientations = facing(&bs_positions, &area);
        Self {
            n_bs: 6,
            n_rx: 16,
            n_sc_total: 1024,
            sc_stride: 10,
            carrier_hz: 3.5e9,
            bandwidth_hz: 80e6,
            tx_power_dbm: 23.0,
            noise_floor_dbm_hz: -174.0,
            noise_figure_db: 2.0,
            area,
            bs_positions,
            bs_orientations,
            antenna_spacing_wavelengths: 0.5,
            environment: EnvironmentModel {
                scatterers_min: 20,
                scatterers_max: 40,
                ..EnvironmentModel::default()
            },
        }
    }

    /// Reduced scenario that trains in minutes on one CPU core: four BSs,
    /// eight antennas, 32 pilot subcarriers, 60 m x 20 m.
    pub fn desk() -> Self {
        let area = Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 60.0,
            y_max: 20.0,
        };
        let bs_positions = vec![
            Point::new(0.0, -5.0),
            Point::new(20.0, 25.0),
            Point::new(40.0, -5.0),
            Point::new(60.0, 25.0),
        ];
        let bs_orientations = facing(&bs_positions, &area);
        Self {
            n_bs: 4,
            n_rx: 8,
            n_sc_total: 1024,
            sc_stride: 32,
            bs_positions,
            bs_orientations,
            area,
            ..Self::paper()
        }
        .with_environment(EnvironmentModel::default())
    }

    fn with_environment(mut self, env: EnvironmentModel) -> Self {
        self.environment = env;
        self
    }

    /// Number of pilot subcarriers, `ceil(n_sc_total / sc_stride)`.
    pub fn n_sc_used(&self) -> usize {
        self.n_sc_total.div_ceil(self.sc_stride)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// FFT bin width.
    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.n_sc_total as f64
    }

    /// Baseband frequency of the `m`-th pilot subcarrier, centered on DC.
    pub fn pilot_frequency_hz(&self, m: usize) -> f64 {
        let bin = (m * self.sc_stride) as f64 - 0.5 * self.n_sc_total as f64;
        bin * self.subcarrier_spacing_hz()
    }

    /// Per-entry complex noise variance relative to the CSI scaling.
    ///
    /// CSI entries are channel gains, i.e. normalised by the per-subcarrier
    /// transmit power (total power spread evenly over `n_sc_total` bins).
    /// Returns 0 when noise is disabled.
    pub fn noise_variance(&self) -> f64 {
        if self.noise_figure_db == f64::NEG_INFINITY {
            return 0.0;
        }
        let bin_db = 10.0 * self.subcarrier_spacing_hz().log10();
        let noise_dbm = self.noise_floor_dbm_hz + bin_db + self.noise_figure_db;
        let tx_per_bin_dbm = self.tx_power_dbm - 10.0 * (self.n_sc_total as f64).log10();
        10f64.powf((noise_dbm - tx_per_bin_dbm) / 10.0)
    }

    /// Keep only the first `k` base stations.
    pub fn with_first_bs(&self, k: usize) -> Self {
        let mut cfg = self.clone();
        cfg.n_bs = k;
        cfg.bs_positions.truncate(k);
        cfg.bs_orientations.truncate(k);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_bs == 0 {
            return fail("n_bs must be at least 1");
        }
        if self.bs_positions.len() != self.n_bs || self.bs_orientations.len() != self.n_bs {
            return fail("bs_positions and bs_orientations must have n_bs entries");
        }
        if self.n_rx < 2 {
            return fail("n_rx must be at least 2 for phase differences");
        }
        if self.n_sc_total == 0 || self.sc_stride == 0 {
            return fail("n_sc_total and sc_stride must be positive");
        }
        if !(self.bandwidth_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return fail("bandwidth_hz and carrier_hz must be positive");
        }
        if !(self.antenna_spacing_wavelengths > 0.0) {
            return fail("antenna_spacing_wavelengths must be positive");
        }
        if !(self.area.width() > 0.0) || !(self.area.height() > 0.0) {
            return fail("area must have positive extent");
        }
        let env = &self.environment;
        if env.scatterers_min == 0 || env.scatterers_min > env.scatterers_max {
            return fail("need 1 <= env.scatterers_min <= env.scatterers_max");
        }
        if env.los_nlos_ratio_db < 0.0 {
            return fail("env.los_nlos_ratio_db must be non-negative");
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parse a config file. Unspecified keys keep the desk-profile default;
    /// a `profile = paper` line switches the base to the paper profile and
    /// must then come first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        let mut orientations_auto = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|e| err(format!("{key}: cannot parse {v:?} as number: {e}")))
            };
            let count = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|e| err(format!("{key}: cannot parse {v:?} as count: {e}")))
            };
            match key {
                "profile" => match value {
                    "desk" => cfg = Self::desk(),
                    "paper" => cfg = Self::paper(),
                    other => return Err(err(format!("unknown profile {other:?}"))),
                },
                "n_bs" => cfg.n_bs = count(value)?,
                "n_rx" => cfg.n_rx = count(value)?,
                "n_sc_total" => cfg.n_sc_total = count(value)?,
                "sc_stride" => cfg.sc_stride = count(value)?,
                "carrier_hz" => cfg.carrier_hz = num(value)?,
                "bandwidth_hz" => cfg.bandwidth_hz = num(value)?,
                "tx_power_dbm" => cfg.tx_power_dbm = num(value)?,
                "noise_floor_dbm_hz" => cfg.noise_floor_dbm_hz = num(value)?,
                "noise_figure_db" => {
                    cfg.noise_figure_db = if value == "off" {
                        f64::NEG_INFINITY
                    } else {
                        num(value)?
                    }
                }
                "area" => {
                    let v = value
                        .split(',')
                        .map(|s| num(s.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    if v.len() != 4 {
                        return Err(err("area needs x_min,y_min,x_max,y_max".into()));
                    }
                    cfg.area = Rect {
                        x_min: v[0],
                        y_min: v[1],
                        x_max: v[2],
                        y_max: v[3],
                    };
                }
                "bs_positions" => {
                    cfg.bs_positions = value
                        .split(';')
                        .map(|pair| {
                            let (x, y) = pair
                                .split_once(',')
                                .ok_or_else(|| err(format!("bad coordinate {pair:?}")))?;
                            Ok(Point::new(num(x.trim())?, num(y.trim())?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                }
                "bs_orientations" => {
                    if value == "auto" {
                        orientations_auto = true;
                    } else {
                        orientations_auto = false;
                        cfg.bs_orientations = value
                            .split(',')
                            .map(|s| num(s.trim()))
                            .collect::<Result<Vec<_>>>()?;
                    }
                }
                "antenna_spacing_wavelengths" => cfg.antenna_spacing_wavelengths = num(value)?,
                "env.seed" => {
                    cfg.environment.seed = value
                        .parse()
                        .map_err(|e| err(format!("env.seed: {e}")))?
                }
                "env.scatterers_min" => cfg.environment.scatterers_min = count(value)?,
                "env.scatterers_max" => cfg.environment.scatterers_max = count(value)?,
                "env.scatter_margin_m" => cfg.environment.scatter_margin_m = num(value)?,
                "env.nlos_excess_loss_db" => cfg.environment.nlos_excess_loss_db = num(value)?,
                "env.reflection_spread_db" => cfg.environment.reflection_spread_db = num(value)?,
                "env.los_nlos_ratio_db" => cfg.environment.los_nlos_ratio_db = num(value)?,
                "env.gain_jitter_db" => cfg.environment.gain_jitter_db = num(value)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if orientations_auto || cfg.bs_orientations.len() != cfg.bs_positions.len() {
            cfg.bs_orientations = facing(&cfg.bs_positions, &cfg.area);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form. `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let nf = if self.noise_figure_db == f64::NEG_INFINITY {
            "off".to_string()
        } else {
            format!("{:?}", self.noise_figure_db)
        };
        let positions = self
            .bs_positions
            .iter()
            .map(|p| format!("{:?},{:?}", p.x, p.y))
            .collect::<Vec<_>>()
            .join("; ");
        let orientations = self
            .bs_orientations
            .iter()
            .map(|o| format!("{o:?}"))
            .collect::<Vec<_>>()
            .join(",");
        let a = &self.area;
        let e = &self.environment;
        let _ = writeln!(s, "n_bs = {}", self.n_bs);
        let _ = writeln!(s, "n_rx = {}", self.n_rx);
        let _ = writeln!(s, "n_sc_total = {}", self.n_sc_total);
        let _ = writeln!(s, "sc_stride = {}", self.sc_stride);
        let _ = writeln!(s, "carrier_hz = {:?}", self.carrier_hz);
        let _ = writeln!(s, "bandwidth_hz = {:?}", self.bandwidth_hz);
        let _ = writeln!(s, "tx_power_dbm = {:?}", self.tx_power_dbm);
        let _ = writeln!(s, "noise_floor_dbm_hz = {:?}", self.noise_floor_dbm_hz);
        let _ = writeln!(s, "noise_figure_db = {nf}");
        let _ = writeln!(
            s,
            "area = {:?},{:?},{:?},{:?}",
            a.x_min, a.y_min, a.x_max, a.y_max
        );
        let _ = writeln!(s, "bs_positions = {positions}");
        let _ = writeln!(s, "bs_orientations = {orientations}");
        let _ = writeln!(
            s,
            "antenna_spacing_wavelengths = {:?}",
            self.antenna_spacing_wavelengths
        );
        let _ = writeln!(s, "env.seed = {}", e.seed);
        let _ = writeln!(s, "env.scatterers_min = {}", e.scatterers_min);
        let _ = writeln!(s, "env.scatterers_max = {}", e.scatterers_max);
        let _ = writeln!(s, "env.scatter_margin_m = {:?}", e.scatter_margin_m);
        let _ = writeln!(s, "env.nlos_excess_loss_db = {:?}", e.nlos_excess_loss_db);
        let _ = writeln!(s, "env.reflection_spread_db = {:?}", e.reflection_spread_db);
        let _ = writeln!(s, "env.los_nlos_ratio_db = {:?}", e.los_nlos_ratio_db);
        let _ = writeln!(s, "env.gain_jitter_db = {:?}", e.gain_jitter_db);
        s
    }
}

/// Point every array broadside at the area center.
fn facing(positions: &[Point], area: &Rect) -> Vec<f64> {
    let c = area.center();
    positions.iter().map(|p| p.azimuth_to(&c)).collect()
}
