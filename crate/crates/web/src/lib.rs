//! Browser bindings for the interactive demo page in `www/`.
//!
//! Three operations are exposed: the LOS blockage curve, the fingerprint a
//! base station sees for a user position (optionally with its LOS ray
//! removed), and late fusion of hand-placed per-station estimates.

use wasm_bindgen::prelude::*;

use csifuse::channel::{los_blockage_prob, paths_to_csi, ChannelModel, PathSet};
use csifuse::config::{Point, ScenarioConfig};
use csifuse::fingerprint::{preprocess, CHANNELS};
use csifuse::fusion::{combine, BsPrediction, FusionStrategy};
use csifuse::neural::PositionEstimate;
use csifuse::uncertainty::McdResult;

fn js_err(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn curve(max_r: f64, steps: usize) -> csifuse::Result<Vec<f64>> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|i| los_blockage_prob(max_r * i as f64 / steps as f64))
        .collect()
}

/// Blockage probability at `steps + 1` evenly spaced distances in
/// `[0, max_r]`.
#[wasm_bindgen]
pub fn blockage_curve(max_r: f64, steps: usize) -> Result<Vec<f64>, JsValue> {
    curve(max_r, steps).map_err(js_err)
}

/// The desk-scale scene with its fixed scatterer field.
#[wasm_bindgen]
pub struct Scene {
    model: ChannelModel,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Scene, JsValue> {
        Ok(Scene {
            model: ChannelModel::new(&ScenarioConfig::desk()).map_err(js_err)?,
        })
    }

    /// `[x_min, y_min, x_max, y_max]` of the user area in meters.
    pub fn area(&self) -> Vec<f64> {
        let a = self.model.config().area;
        vec![a.x_min, a.y_min, a.x_max, a.y_max]
    }

    /// Flattened `[x0, y0, x1, y1, ...]` station positions.
    pub fn stations(&self) -> Vec<f64> {
        self.model
            .config()
            .bs_positions
            .iter()
            .flat_map(|p| [p.x, p.y])
            .collect()
    }

    /// Flattened `[x0, y0, ...]` scatterer positions.
    pub fn scatterers(&self) -> Vec<f64> {
        self.model
            .scatterers()
            .iter()
            .flat_map(|s| [s.position.x, s.position.y])
            .collect()
    }

    /// `[antennas, pilots]`, the heatmap shape.
    pub fn shape(&self) -> Vec<u32> {
        let cfg = self.model.config();
        vec![cfg.n_rx as u32, cfg.n_sc_used() as u32]
    }

    /// One channel (0 magnitude, 1 sine, 2 cosine of the antenna phase
    /// difference) of station `bs`'s noise-free fingerprint for a user at
    /// `(x, y)`, row-major antennas x pilots. With `blocked` the LOS ray
    /// is removed first.
    pub fn fingerprint(&self, x: f64, y: f64, bs: usize, blocked: bool, channel: usize) -> Result<Vec<f64>, JsValue> {
        self.heatmap(x, y, bs, blocked, channel).map_err(js_err)
    }

    /// Distance from the user at `(x, y)` to station `bs`.
    pub fn distance(&self, x: f64, y: f64, bs: usize) -> Result<f64, JsValue> {
        let p = self
            .model
            .config()
            .bs_positions
            .get(bs)
            .ok_or_else(|| js_err("station index out of range"))?;
        Ok(p.distance(&Point::new(x, y)))
    }
}

impl Scene {
    fn heatmap(&self, x: f64, y: f64, bs: usize, blocked: bool, channel: usize) -> Result<Vec<f64>, String> {
        if channel >= CHANNELS {
            return Err("channel must be 0, 1 or 2".into());
        }
        let cfg = self.model.config();
        let paths = self
            .model
            .generate_paths(bs, Point::new(x, y), 0)
            .map_err(|e| e.to_string())?;
        let paths = if blocked {
            PathSet {
                paths: paths.paths.into_iter().filter(|p| !p.is_los).collect(),
                ..paths
            }
        } else {
            paths
        };
        let fp = paths_to_csi(&paths, cfg, bs)
            .and_then(|csi| preprocess(&csi))
            .map_err(|e| e.to_string())?;
        let (rows, cols, _) = fp.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(fp.get(r, c, channel));
            }
        }
        Ok(out)
    }
}

/// Late fusion of 2-D per-station estimates. `estimates` and `variances`
/// are flattened `[x0, y0, x1, y1, ...]`; the variances act as MC-dropout
/// variances for `late-mcd` and as aleatoric variances otherwise. Returns
/// `[x, y, w0x, w0y, w1x, w1y, ...]` with weights normalised per axis.
#[wasm_bindgen]
pub fn fuse(strategy: &str, estimates: &[f64], variances: &[f64]) -> Result<Vec<f64>, JsValue> {
    fuse_pairs(strategy, estimates, variances).map_err(js_err)
}

fn fuse_pairs(strategy: &str, estimates: &[f64], variances: &[f64]) -> Result<Vec<f64>, String> {
    let strategy: FusionStrategy = strategy.parse().map_err(|e: csifuse::Error| e.to_string())?;
    if estimates.len() != variances.len() || estimates.len() % 2 != 0 {
        return Err("estimates and variances must be equal-length [x, y] pairs".into());
    }
    let preds: Vec<BsPrediction> = estimates
        .chunks_exact(2)
        .zip(variances.chunks_exact(2))
        .map(|(p, v)| BsPrediction {
            eval: PositionEstimate {
                p_hat: p.to_vec(),
                s: v.iter().map(|v| v.ln()).collect(),
            },
            mcd: Some(McdResult {
                mean_p: p.to_vec(),
                var_mc: v.to_vec(),
                aleatoric: v.to_vec(),
                t_passes: 1,
            }),
        })
        .collect();
    let fused = combine(strategy, &preds).map_err(|e| e.to_string())?;
    let mut out = fused.position;
    out.extend(fused.diagnostics.weights.normalized().into_iter().flatten());
    Ok(out)
}
