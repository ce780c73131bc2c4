use std::collections::BTreeMap;
use std::path::Path;

use super::dataset::{make_test_csi, mean_error, Dataset, Scenario, Split};
use super::report::{ReportRow, ReportTable};
use crate::error::{Error, Result};
use crate::fingerprint::{concat_early, Fingerprint};
use crate::fusion::{combine, BsPrediction, FusionStrategy};
use crate::neural::{
    load_model, predict, save_model, train, LabeledSet, Mode, ModelParams, ModelSpec, TrainConfig, Trained,
};
use crate::seed::{self, stream};
use crate::uncertainty::{mcd_predict_batch, McdResult};

/// What to train and evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub strategies: Vec<FusionStrategy>,
    /// Also evaluate the first `k` stations for every `k < n_bs`.
    pub bs_subset_sweep: bool,
    /// One run per seed: it seeds training, and through it the test noise,
    /// blockage and MC passes.
    pub seeds: Vec<u64>,
    /// Per-station architecture; early models stack stations along rows.
    /// The `seed` field of `train` is replaced per model.
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Keep per-sample, per-station weight diagnostics.
    pub collect_diagnostics: bool,
}

impl ExperimentConfig {
    pub fn new(ds: &Dataset, train: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            scenarios: vec![Scenario::Static, Scenario::Dynamic],
            strategies: FusionStrategy::ALL.to_vec(),
            bs_subset_sweep: false,
            seeds,
            spec: ModelSpec::standard(ds.config.n_rx, ds.config.n_sc_used()),
            train,
            collect_diagnostics: false,
        }
    }

    /// Overlay settings from `key = value` lines (`#` starts a comment):
    /// `scenarios`, `strategies` and `seeds` take comma-separated lists;
    /// `sweep` and `diagnostics` take `true`/`false`; `epochs`,
    /// `batch_size`, `learning_rate` and `dropout_p` set training knobs.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected key = value".into()))?;
            let list = || value.split(',').map(str::trim).filter(|v| !v.is_empty());
            let num = |what: &str| err(format!("bad {what} {value:?}"));
            match key {
                "scenarios" => {
                    self.scenarios = list().map(Scenario::parse).collect::<Result<_>>().map_err(|e| err(e.to_string()))?
                }
                "strategies" => {
                    self.strategies = list().map(str::parse).collect::<Result<_>>().map_err(|e| err(e.to_string()))?
                }
                "seeds" => {
                    self.seeds = list()
                        .map(|v| v.parse().map_err(|_| num("seed")))
                        .collect::<Result<_>>()?
                }
                "sweep" => self.bs_subset_sweep = value.parse().map_err(|_| num("flag"))?,
                "diagnostics" => self.collect_diagnostics = value.parse().map_err(|_| num("flag"))?,
                "epochs" => self.train.epochs = value.parse().map_err(|_| num("count"))?,
                "batch_size" => self.train.batch_size = value.parse().map_err(|_| num("count"))?,
                "learning_rate" => self.train.learning_rate = value.parse().map_err(|_| num("number"))?,
                "dropout_p" => self.spec.dropout_p = value.parse().map_err(|_| num("number"))?,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(())
    }

    /// Station counts whose early models are needed.
    pub fn early_sizes(&self, n_bs: usize) -> Vec<usize> {
        if !self.strategies.contains(&FusionStrategy::Early) {
            return Vec::new();
        }
        if self.bs_subset_sweep {
            (1..=n_bs).collect()
        } else {
            vec![n_bs]
        }
    }
}

/// Trained networks of one run.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub per_bs: Vec<ModelParams<f32>>,
    /// Early-fusion models keyed by the number of leading stations they see.
    /// The one-station model is station 0's own model and is not repeated.
    pub early: BTreeMap<usize, ModelParams<f32>>,
    /// Per-epoch training losses by model file stem; empty for loaded sets.
    pub epoch_losses: BTreeMap<String, Vec<f64>>,
}

impl ModelSet {
    pub fn early_params(&self, k: usize) -> Option<&ModelParams<f32>> {
        if k == 1 {
            self.per_bs.first()
        } else {
            self.early.get(&k)
        }
    }

    /// Write `bs<N>.clfm` per station and `early<K>.clfm` per early model.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (n, p) in self.per_bs.iter().enumerate() {
            save_model(p, dir.join(format!("bs{}.clfm", n + 1)))?;
        }
        for (k, p) in &self.early {
            save_model(p, dir.join(format!("early{k}.clfm")))?;
        }
        Ok(())
    }

    /// Load the files written by [`ModelSet::save`] for `ds`'s stations;
    /// early models are optional.
    pub fn load(dir: impl AsRef<Path>, ds: &Dataset, spec: &ModelSpec) -> Result<Self> {
        let dir = dir.as_ref();
        let per_bs = (0..ds.n_bs())
            .map(|n| load_model(dir.join(format!("bs{}.clfm", n + 1)), spec))
            .collect::<Result<Vec<_>>>()?;
        let mut early = BTreeMap::new();
        for k in 2..=ds.n_bs() {
            let path = dir.join(format!("early{k}.clfm"));
            if path.exists() {
                early.insert(k, load_model(path, &early_spec(spec, k))?);
            }
        }
        Ok(Self {
            per_bs,
            early,
            epoch_losses: BTreeMap::new(),
        })
    }
}

/// Training seed of station `n`'s model in run `seed`.
pub fn per_bs_train_seed(seed: u64, n: usize) -> u64 {
    seed::derive(seed, &[stream::MODEL, 1, n as u64])
}

/// Training seed of the `k`-station early model in run `seed`.
pub fn early_train_seed(seed: u64, k: usize) -> u64 {
    seed::derive(seed, &[stream::MODEL, 2, k as u64])
}

/// Early-fusion architecture for the first `k` stations.
pub fn early_spec(spec: &ModelSpec, k: usize) -> ModelSpec {
    ModelSpec {
        input_rows: spec.input_rows * k,
        ..spec.clone()
    }
}

fn training_set(ds: &Dataset, spec: &ModelSpec, stations: &[usize]) -> Result<LabeledSet> {
    let mut set = LabeledSet::new(spec.input_len(), spec.outputs);
    for i in ds.indices(Split::Train) {
        let fps = stations
            .iter()
            .map(|&n| ds.train_fingerprint(i, n))
            .collect::<Result<Vec<_>>>()?;
        let fp = if fps.len() == 1 { fps.into_iter().next().expect("one") } else { concat_early(&fps)? };
        set.push(&fp, &ds.records[i].label())?;
    }
    Ok(set)
}

/// Train every station's model and the early models listed in
/// `early_sizes` (`k = 1` reuses station 0's model).
pub fn train_models(ds: &Dataset, exp: &ExperimentConfig, seed: u64, early_sizes: &[usize]) -> Result<ModelSet> {
    enum Job {
        Station(usize),
        Early(usize),
    }
    let n_bs = ds.n_bs();
    let mut jobs: Vec<Job> = (0..n_bs).map(Job::Station).collect();
    jobs.extend(early_sizes.iter().filter(|&&k| k > 1 && k <= n_bs).map(|&k| Job::Early(k)));
    let run = |job: &Job| -> Result<Trained> {
        let (spec, stations, s) = match *job {
            Job::Station(n) => (exp.spec.clone(), vec![n], per_bs_train_seed(seed, n)),
            Job::Early(k) => (early_spec(&exp.spec, k), (0..k).collect(), early_train_seed(seed, k)),
        };
        let data = training_set(ds, &spec, &stations)?;
        let cfg = TrainConfig {
            seed: s,
            ..exp.train.clone()
        };
        train(&spec, &data, &cfg)
    };
    #[cfg(feature = "parallel")]
    let trained: Vec<Result<Trained>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trained: Vec<Result<Trained>> = jobs.iter().map(run).collect();

    let mut set = ModelSet {
        per_bs: Vec::with_capacity(n_bs),
        early: BTreeMap::new(),
        epoch_losses: BTreeMap::new(),
    };
    for (job, t) in jobs.iter().zip(trained) {
        let t = t?;
        match *job {
            Job::Station(n) => {
                set.epoch_losses.insert(format!("bs{}", n + 1), t.epoch_losses);
                set.per_bs.push(t.params);
            }
            Job::Early(k) => {
                set.epoch_losses.insert(format!("early{k}"), t.epoch_losses);
                set.early.insert(k, t.params);
            }
        }
    }
    Ok(set)
}

/// Average normalised weight of stations whose LOS ray was blocked versus
/// kept, over test samples and components.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStat {
    pub scenario: Scenario,
    pub strategy: String,
    pub seed: u64,
    pub blocked_mean: f64,
    pub blocked_count: usize,
    pub unblocked_mean: f64,
    pub unblocked_count: usize,
}

/// One station's part in one late-fusion decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub scenario: Scenario,
    pub strategy: String,
    pub seed: u64,
    pub sample: usize,
    pub bs: usize,
    pub component: usize,
    pub blocked: bool,
    pub aleatoric_var: f64,
    /// The variance the weight was derived from.
    pub weight_var: f64,
    /// Weight normalised over stations.
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub table: ReportTable,
    pub weight_stats: Vec<WeightStat>,
    pub diagnostics: Vec<DiagnosticRow>,
    /// Set when a run could not finish; the rows before it are kept.
    pub aborted: Option<String>,
}

/// Seed of the test-time draws (noise, blockage, MC passes) of run `seed`.
pub fn eval_seed(seed: u64) -> u64 {
    seed::derive(seed, &[stream::TEST_NOISE])
}

/// Evaluate trained models on the test split: one row per single station,
/// and per strategy and station count.
pub fn evaluate(ds: &Dataset, models: &ModelSet, exp: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    let n_bs = ds.n_bs();
    if models.per_bs.len() != n_bs {
        return Err(Error::Shape(format!("{} models for {n_bs} stations", models.per_bs.len())));
    }
    let test = ds.indices(Split::Test);
    let labels: Vec<Vec<f64>> = test.iter().map(|&i| ds.records[i].label().to_vec()).collect();
    let es = eval_seed(seed);
    let mut sizes = vec![n_bs];
    if exp.bs_subset_sweep {
        sizes = (1..=n_bs).collect();
    }
    let mut out = ExperimentResult::default();

    for &scenario in &exp.scenarios {
        let obs = test
            .iter()
            .map(|&i| make_test_csi(ds, i, scenario, es))
            .collect::<Result<Vec<_>>>()?;
        // fps[n][j]: normalised fingerprint of station n for test sample j
        let mut fps: Vec<Vec<Fingerprint>> = Vec::with_capacity(n_bs);
        for n in 0..n_bs {
            fps.push(
                obs.iter()
                    .map(|o| {
                        let mut fp = crate::fingerprint::apply_norm(&crate::fingerprint::preprocess(&o.csi[n])?, &ds.norm[n]);
                        fp.source_bs = n;
                        Ok(fp)
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut eval = Vec::with_capacity(n_bs);
        for n in 0..n_bs {
            let refs: Vec<&Fingerprint> = fps[n].iter().collect();
            eval.push(predict(&models.per_bs[n], &refs, Mode::Eval, &[])?);
        }
        let mut mcd: BTreeMap<usize, Vec<Vec<McdResult>>> = BTreeMap::new();
        for s in &exp.strategies {
            if let FusionStrategy::LateMcd { t_passes } = *s {
                if mcd.contains_key(&t_passes) {
                    continue;
                }
                let mut per = Vec::with_capacity(n_bs);
                for n in 0..n_bs {
                    let refs: Vec<&Fingerprint> = fps[n].iter().collect();
                    let seeds: Vec<u64> = test
                        .iter()
                        .map(|&i| seed::derive(es, &[stream::MC_PASS, i as u64, n as u64]))
                        .collect();
                    per.push(mcd_predict_batch(&models.per_bs[n], &refs, t_passes, &seeds)?);
                }
                mcd.insert(t_passes, per);
            }
        }

        let row = |strategy: String, k: usize, me: f64| ReportRow {
            scenario,
            strategy,
            n_bs: k,
            seed,
            mean_error_m: me,
        };
        for n in 0..n_bs {
            let preds: Vec<Vec<f64>> = eval[n].iter().map(|e| e.p_hat.clone()).collect();
            out.table.rows.push(row(format!("bs{}", n + 1), 1, mean_error(&preds, &labels)?));
        }
        for &k in &sizes {
            for &strategy in &exp.strategies {
                if k < strategy.min_bs() {
                    continue;
                }
                let preds: Vec<Vec<f64>> = match strategy {
                    FusionStrategy::Early => {
                        let Some(params) = models.early_params(k) else {
                            return Err(Error::InvalidArgument(format!("no early model for {k} stations")));
                        };
                        let stacked = (0..test.len())
                            .map(|j| concat_early(&fps[..k].iter().map(|f| f[j].clone()).collect::<Vec<_>>()))
                            .collect::<Result<Vec<_>>>()?;
                        let refs: Vec<&Fingerprint> = stacked.iter().collect();
                        predict(params, &refs, Mode::Eval, &[])?.into_iter().map(|e| e.p_hat).collect()
                    }
                    _ => {
                        let mut stat = [(0.0, 0usize), (0.0, 0usize)];
                        let mut preds = Vec::with_capacity(test.len());
                        for j in 0..test.len() {
                            let bs_preds: Vec<BsPrediction> = (0..k)
                                .map(|n| BsPrediction {
                                    eval: eval[n][j].clone(),
                                    mcd: match strategy {
                                        FusionStrategy::LateMcd { t_passes } => Some(mcd[&t_passes][n][j].clone()),
                                        _ => None,
                                    },
                                })
                                .collect();
                            let fused = combine(strategy, &bs_preds)?;
                            if k == n_bs {
                                let w = fused.diagnostics.weights.normalized();
                                for n in 0..k {
                                    let blocked = obs[j].blocked[n];
                                    for (c, wv) in w[n].iter().enumerate() {
                                        let slot = &mut stat[blocked as usize];
                                        slot.0 += wv;
                                        slot.1 += 1;
                                        if exp.collect_diagnostics {
                                            out.diagnostics.push(DiagnosticRow {
                                                scenario,
                                                strategy: strategy.name().to_string(),
                                                seed,
                                                sample: test[j],
                                                bs: n,
                                                component: c,
                                                blocked,
                                                aleatoric_var: fused.diagnostics.aleatoric[n][c],
                                                weight_var: fused.diagnostics.uncertainty[n][c],
                                                weight: *wv,
                                            });
                                        }
                                    }
                                }
                            }
                            preds.push(fused.position);
                        }
                        if k == n_bs {
                            let mean = |s: (f64, usize)| if s.1 == 0 { f64::NAN } else { s.0 / s.1 as f64 };
                            out.weight_stats.push(WeightStat {
                                scenario,
                                strategy: strategy.name().to_string(),
                                seed,
                                blocked_mean: mean(stat[1]),
                                blocked_count: stat[1].1,
                                unblocked_mean: mean(stat[0]),
                                unblocked_count: stat[0].1,
                            });
                        }
                        preds
                    }
                };
                out.table.rows.push(row(strategy.name().to_string(), k, mean_error(&preds, &labels)?));
            }
        }
    }
    Ok(out)
}

/// Train and evaluate every run of `exp`. A run whose training fails stops
/// the experiment; the rows of completed runs are returned with
/// [`ExperimentResult::aborted`] set.
pub fn run_experiment(ds: &Dataset, exp: &ExperimentConfig) -> Result<ExperimentResult> {
    if exp.seeds.is_empty() {
        return Err(Error::InvalidArgument("experiment needs at least one seed".into()));
    }
    for s in &exp.strategies {
        if let FusionStrategy::LateMcd { t_passes: 0 } = s {
            return Err(Error::InvalidArgument("late-mcd needs t_passes >= 1".into()));
        }
    }
    let mut result = ExperimentResult::default();
    for &seed in &exp.seeds {
        let models = match train_models(ds, exp, seed, &exp.early_sizes(ds.n_bs())) {
            Ok(m) => m,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                result.aborted = Some(format!("seed {seed}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let r = evaluate(ds, &models, exp, seed)?;
        result.table.rows.extend(r.table.rows);
        result.weight_stats.extend(r.weight_stats);
        result.diagnostics.extend(r.diagnostics);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::harness::build_dataset;

    fn tiny() -> Dataset {
        let mut cfg = ScenarioConfig::desk();
        cfg.n_rx = 4;
        cfg.sc_stride = 64;
        build_dataset(&cfg, 40, 2).unwrap()
    }

    fn small_spec(ds: &Dataset) -> ModelSpec {
        let base = ModelSpec::standard(ds.config.n_rx, ds.config.n_sc_used());
        ModelSpec {
            conv: vec![crate::neural::ConvSpec {
                kernels: 4,
                kernel_rows: 2,
                kernel_cols: 4,
            }],
            dense: vec![16],
            ..base
        }
    }

    #[test]
    fn experiment_text_overlay() {
        let ds = tiny();
        let mut exp = ExperimentConfig::new(&ds, TrainConfig::desk(0), vec![1]);
        exp.apply_text("# run\nscenarios = dynamic\nstrategies = late-equal, late-mcd:8\nseeds = 3,4\nsweep = true\nepochs = 2\n")
            .unwrap();
        assert_eq!(exp.scenarios, vec![Scenario::Dynamic]);
        assert_eq!(exp.strategies, vec![FusionStrategy::LateEqual, FusionStrategy::LateMcd { t_passes: 8 }]);
        assert_eq!(exp.seeds, vec![3, 4]);
        assert!(exp.bs_subset_sweep);
        assert_eq!(exp.train.epochs, 2);
        assert!(matches!(exp.apply_text("\nbogus = 1"), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn row_bookkeeping_and_sweep_shape() {
        let ds = tiny();
        let mut exp = ExperimentConfig::new(&ds, TrainConfig { epochs: 2, ..TrainConfig::desk(0) }, vec![1, 2]);
        exp.spec = small_spec(&ds);
        exp.strategies = vec![
            FusionStrategy::Early,
            FusionStrategy::LateEqual,
            FusionStrategy::LateMcd { t_passes: 4 },
            FusionStrategy::LateDe,
        ];
        let r = run_experiment(&ds, &exp).unwrap();
        assert_eq!(r.table.rows.len(), 2 * 2 * (4 + 4));
        assert!(r.table.rows.iter().all(|row| row.mean_error_m >= 0.0));

        exp.bs_subset_sweep = true;
        exp.seeds = vec![1];
        let r = run_experiment(&ds, &exp).unwrap();
        for scenario in [Scenario::Static, Scenario::Dynamic] {
            for k in 1..=4 {
                assert_eq!(r.table.select(scenario, "late-de", k).count(), usize::from(k >= 3));
                assert_eq!(r.table.select(scenario, "early", k).count(), 1);
            }
        }
    }

    #[test]
    fn late_equal_on_one_station_is_the_station() {
        let mut cfg = ScenarioConfig::desk().with_first_bs(1);
        cfg.n_rx = 4;
        cfg.sc_stride = 64;
        let ds = build_dataset(&cfg, 30, 5).unwrap();
        let mut exp = ExperimentConfig::new(&ds, TrainConfig { epochs: 1, ..TrainConfig::desk(0) }, vec![9]);
        exp.spec = small_spec(&ds);
        exp.strategies = vec![FusionStrategy::LateEqual];
        let r = run_experiment(&ds, &exp).unwrap();
        for scenario in [Scenario::Static, Scenario::Dynamic] {
            let single = r.table.select(scenario, "bs1", 1).next().unwrap().mean_error_m;
            let fused = r.table.select(scenario, "late-equal", 1).next().unwrap().mean_error_m;
            assert_eq!(single, fused);
        }
    }
}
