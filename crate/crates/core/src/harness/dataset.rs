use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{add_noise, blockage_draw, los_blockage_prob, paths_to_csi, ChannelModel, CsiMatrix, Path, PathSet};
use crate::config::{Point, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fingerprint::{apply_norm, fit_norm, preprocess, Fingerprint, NormStats};
use crate::seed::{self, stream};

/// What one station stores for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct BsRecord {
    pub distance_m: f64,
    /// The direct ray, kept so that blockage can be replayed at test time.
    pub los: Path,
    /// Noise-free CSI, rounded to binary32 as stored on disk.
    pub clean: CsiMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub position: Point,
    pub per_bs: Vec<BsRecord>,
}

impl Record {
    pub fn label(&self) -> [f64; 2] {
        [self.position.x, self.position.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled positions with the clean channel of every station, a train/test
/// split, and the per-station normalisation fitted on the (noisy) training
/// fingerprints.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub records: Vec<Record>,
    pub split: Vec<Split>,
    pub norm: Vec<NormStats>,
}

/// Fraction of positions used for training.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Up to `n` cell indices of an `nx x ny` grid that covers `area` with
/// roughly square cells, and their count per axis.
fn grid_shape(n: usize, width: f64, height: f64) -> (usize, usize) {
    let nx = ((n as f64 * width / height).sqrt().ceil() as usize).max(1);
    let ny = n.div_ceil(nx).max(1);
    (nx, ny)
}

/// `n` positions: one uniformly jittered point in each of `n` distinct
/// cells, drawn at random, of a near-square grid over the area.
pub fn jittered_grid(cfg: &ScenarioConfig, n: usize, seed: u64) -> Vec<Point> {
    let area = cfg.area;
    let (nx, ny) = grid_shape(n, area.width(), area.height());
    let (cw, ch) = (area.width() / nx as f64, area.height() / ny as f64);
    let mut rng = seed::rng(seed::derive(seed, &[stream::POSITIONS]));
    let mut cells: Vec<usize> = (0..nx * ny).collect();
    cells.shuffle(&mut rng);
    cells.truncate(n);
    cells.sort_unstable();
    cells
        .into_iter()
        .map(|c| {
            let (i, j) = (c % nx, c / nx);
            let x = area.x_min + cw * (i as f64 + rng.random::<f64>());
            let y = area.y_min + ch * (j as f64 + rng.random::<f64>());
            Point::new(x.min(area.x_max), y.min(area.y_max))
        })
        .collect()
}

impl Dataset {
    pub fn n_bs(&self) -> usize {
        self.config.n_bs
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// The fixed noisy training observation of station `n` at record `i`,
    /// before normalisation.
    pub fn train_fingerprint_raw(&self, i: usize, n: usize) -> Result<Fingerprint> {
        let noisy = add_noise(
            &self.records[i].per_bs[n].clean,
            &self.config,
            seed::derive(self.seed, &[stream::TRAIN_NOISE, i as u64, n as u64]),
        );
        let mut fp = preprocess(&noisy)?;
        fp.source_bs = n;
        Ok(fp)
    }

    /// [`Dataset::train_fingerprint_raw`] normalised with station `n`'s stats.
    pub fn train_fingerprint(&self, i: usize, n: usize) -> Result<Fingerprint> {
        let fp = self.train_fingerprint_raw(i, n)?;
        let mut out = apply_norm(&fp, &self.norm[n]);
        out.source_bs = n;
        Ok(out)
    }
}

/// Sample positions and compute every station's clean channel.
pub fn build_dataset(cfg: &ScenarioConfig, n_positions: usize, seed: u64) -> Result<Dataset> {
    if n_positions < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 positions, got {n_positions}"
        )));
    }
    let model = ChannelModel::new(cfg)?;
    let positions = jittered_grid(cfg, n_positions, seed);
    let build = |(i, p): (usize, &Point)| -> Result<Record> {
        let per_bs = (0..cfg.n_bs)
            .map(|n| {
                let paths = model.generate_paths(n, *p, seed::derive(seed, &[stream::PATHS, i as u64, n as u64]))?;
                let los = *paths.los().expect("generated paths carry a LOS ray");
                Ok(BsRecord {
                    distance_m: paths.ue_bs_distance_m,
                    los,
                    clean: paths_to_csi(&paths, cfg, n)?.quantized(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Record { position: *p, per_bs })
    };
    #[cfg(feature = "parallel")]
    let records = {
        use rayon::prelude::*;
        positions.par_iter().enumerate().map(build).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let records = positions.iter().enumerate().map(build).collect::<Result<Vec<_>>>()?;

    let n_train = (n_positions as f64 * TRAIN_FRACTION).round() as usize;
    let mut order: Vec<usize> = (0..n_positions).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[stream::SPLIT])));
    let mut split = vec![Split::Test; n_positions];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let mut ds = Dataset {
        config: cfg.clone(),
        seed,
        records,
        split,
        norm: Vec::new(),
    };
    ds.norm = fit_dataset_norm(&ds)?;
    Ok(ds)
}

fn fit_dataset_norm(ds: &Dataset) -> Result<Vec<NormStats>> {
    let train = ds.indices(Split::Train);
    (0..ds.n_bs())
        .map(|n| {
            let fps = train
                .iter()
                .map(|&i| ds.train_fingerprint_raw(i, n))
                .collect::<Result<Vec<_>>>()?;
            fit_norm(&fps)
        })
        .collect()
}

/// Test-time conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Every station keeps its LOS ray.
    Static,
    /// Each station independently loses its LOS ray with the
    /// distance-dependent blockage probability.
    Dynamic,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::Dynamic => "dynamic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Scenario::Static),
            "dynamic" => Ok(Scenario::Dynamic),
            _ => Err(Error::InvalidArgument(format!("unknown scenario {s:?}"))),
        }
    }
}

/// One test observation of all stations.
#[derive(Debug, Clone, PartialEq)]
pub struct TestObservation {
    pub csi: Vec<CsiMatrix>,
    pub blocked: Vec<bool>,
}

/// Build the test-time CSI of record `i`: the clean channel, minus the LOS
/// ray where blocked (dynamic only), plus fresh noise. Noise and blockage
/// draws are keyed by `(seed, i, station)`; the same seed gives the same
/// noise in both scenarios.
pub fn make_test_csi(ds: &Dataset, i: usize, scenario: Scenario, seed: u64) -> Result<TestObservation> {
    let record = ds.records.get(i).ok_or_else(|| Error::InvalidArgument(format!("record {i} out of range")))?;
    let mut csi = Vec::with_capacity(ds.n_bs());
    let mut blocked = Vec::with_capacity(ds.n_bs());
    for (n, bs) in record.per_bs.iter().enumerate() {
        let block = match scenario {
            Scenario::Static => false,
            Scenario::Dynamic => blockage_draw(
                seed::derive(seed, &[stream::BLOCKAGE, i as u64, n as u64]),
                los_blockage_prob(bs.distance_m)?,
            ),
        };
        let channel = if block {
            let los = PathSet {
                paths: vec![bs.los],
                ue_bs_distance_m: bs.distance_m,
            };
            bs.clean.sub(&paths_to_csi(&los, &ds.config, n)?)?
        } else {
            bs.clean.clone()
        };
        csi.push(add_noise(
            &channel,
            &ds.config,
            seed::derive(seed, &[stream::TEST_NOISE, i as u64, n as u64]),
        ));
        blocked.push(block);
    }
    Ok(TestObservation { csi, blocked })
}

/// Average Euclidean distance between predictions and labels.
pub fn mean_error(predictions: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, l) in predictions.iter().zip(labels) {
        if p.len() != l.len() {
            return Err(Error::Shape("prediction and label dimensions differ".into()));
        }
        total += p.iter().zip(l).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    }
    Ok(total / predictions.len() as f64)
}
