//! End-to-end acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria print in order
//! with their measurements. The fusion-ordering and sweep criteria train the
//! desk profile for five seeds and dominate the runtime.
//!
//! Criteria 5 and 6 measure how closely trained models on the synthetic
//! scenario follow the expected ordering of fusion strategies and the shape
//! of the station-count curves. Their FAIL lines are printed like any other,
//! but they do not fail the process; every other criterion is an exact
//! property of the implementation and does.

use std::time::Instant;

use csifuse::channel::{blockage_draw, los_blockage_prob};
use csifuse::config::ScenarioConfig;
use csifuse::fingerprint::Fingerprint;
use csifuse::harness::{
    build_dataset, dataset_from_bytes, dataset_to_bytes, evaluate, save_dataset, train_models, Dataset,
    ExperimentConfig, ExperimentResult, ModelSet, Scenario,
};
use csifuse::neural::{
    forward, grad_check, heteroscedastic_loss, model_from_bytes, model_to_bytes, LabelScaler, Mode, ModelParams,
    ModelSpec, PositionEstimate, TrainConfig,
};
use csifuse::seed::{self, stream};
use csifuse::uncertainty::{de_set_variance, de_weights, mcd_predict, pass_seed, EnsembleInputs};
use csifuse::Error;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DATASET_SEED: u64 = 1;
const DESK_POSITIONS: usize = 2000;
/// Criteria reported without failing the run.
const REPRODUCTION_ONLY: [usize; 2] = [5, 6];

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

/// Welford running mean and population variance.
fn welford(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    (mean, m2 / n)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn sample_input(spec: &ModelSpec, phase: f64) -> Fingerprint {
    let data = (0..spec.input_len())
        .map(|i| 0.5 + 0.5 * (0.61 * i as f64 + phase).sin())
        .collect();
    Fingerprint::new(spec.input_rows, spec.input_cols, data, 0).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let spec = ModelSpec::toy();
    let mut worst = 0.0f64;
    for (k, label) in [[0.7, -1.2], [-0.3, 2.5], [1.9, 0.4]].iter().enumerate() {
        let r = grad_check(&spec, &sample_input(&spec, k as f64), label, 1e-5, 10 + k as u64, usize::MAX).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("toy spec max rel error {worst:.2e} in {secs:.2} s"),
    )
}

/// Golden-section search for the minimiser of a unimodal `f` on `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn loss_law() -> Outcome {
    let mut exact = true;
    for (p, q) in [([3.0, -1.0], [1.0, 2.0]), ([0.25, 8.0], [-4.5, 0.125]), ([1e3, -7.0], [999.0, 7.0])] {
        let est = PositionEstimate {
            p_hat: q.to_vec(),
            s: vec![0.0, 0.0],
        };
        let half_mse = 0.5 * ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)) / 2.0;
        exact &= heteroscedastic_loss(&p, &est) == half_mse;
    }
    let mut worst = 0.0f64;
    for e in [0.05, 0.3, 1.0, 2.5, 17.0] {
        let loss = |s: f64| {
            heteroscedastic_loss(
                &[e],
                &PositionEstimate {
                    p_hat: vec![0.0],
                    s: vec![s],
                },
            )
        };
        let s_star = golden_min(loss, -12.0, 12.0);
        worst = worst.max((s_star - (e * e).ln()).abs());
    }
    outcome(
        exact && worst < 1e-6,
        format!("half-MSE exact: {exact}; argmin_s vs ln e^2 max deviation {worst:.2e}"),
    )
}

fn uncertainty_oracles() -> Outcome {
    let spec = ModelSpec::standard(8, 32);
    let params = ModelParams::<f64>::init(&spec, 21, LabelScaler { shift: vec![30.0, 10.0], scale: vec![17.0, 6.0] }).unwrap();
    let fp = sample_input(&spec, 0.4);
    let (t, mc_seed) = (40, 99);
    let passes: Vec<PositionEstimate> = (0..t)
        .map(|k| forward(&params, &fp, Mode::McDropout, pass_seed(mc_seed, k)).unwrap())
        .collect();
    let mcd = mcd_predict(&params, &fp, t, mc_seed).unwrap();
    let mut worst = 0.0f64;
    for d in 0..2 {
        let (mean, var) = welford(passes.iter().map(|p| p.p_hat[d]));
        let (alea, _) = welford(passes.iter().map(|p| p.s[d].exp()));
        worst = worst.max(rel(mcd.mean_p[d], mean)).max(rel(mcd.var_mc[d], var + alea));
    }

    let estimates: Vec<PositionEstimate> = passes[..5].to_vec();
    let inputs = EnsembleInputs::from_estimates(&estimates);
    for n in 0..estimates.len() {
        for d in 0..2 {
            let members = || estimates.iter().enumerate().filter(|(i, _)| *i != n).map(|(_, e)| e);
            let (_, var) = welford(members().map(|e| e.p_hat[d]));
            let (alea, _) = welford(members().map(|e| e.s[d].exp()));
            worst = worst.max(rel(de_set_variance(&inputs, n, d).unwrap(), var + alea));
        }
    }

    let w = de_weights(&vec![vec![2.0], vec![1.0], vec![1.0]]).unwrap();
    let exact = w.w == vec![vec![1.0], vec![1.0 / 3.0], vec![1.0 / 3.0]];
    outcome(
        worst < 1e-12 && exact,
        format!("max rel deviation from streaming oracle {worst:.2e}; de_weights([2,1,1]) exact: {exact}"),
    )
}

fn blockage_statistics() -> Outcome {
    let trials = 10_000u64;
    let p = 1.0 - 0.95f64.powi(5);
    let p_impl = los_blockage_prob(50.0).unwrap();
    let master = seed::derive(7, &[stream::TEST_NOISE]);
    let hits = (0..trials)
        .filter(|&i| blockage_draw(seed::derive(master, &[stream::BLOCKAGE, i, 0]), p_impl))
        .count() as f64;
    let n = trials as f64;
    let sd = (n * p * (1.0 - p)).sqrt();
    let z = (hits - n * p) / sd;
    outcome(
        z.abs() < 3.0,
        format!("{hits} of {trials} blocked, expected {:.1} (z = {z:+.2})", n * p),
    )
}

struct DeskRun {
    results: Vec<(u64, ExperimentResult)>,
    secs: f64,
    sweep_secs: f64,
}

fn desk_runs(ds: &Dataset) -> DeskRun {
    let t = Instant::now();
    let mut results = Vec::new();
    let mut sweep_secs = 0.0;
    for &s in &SEEDS {
        let mut exp = ExperimentConfig::new(ds, TrainConfig::desk(s), vec![s]);
        exp.bs_subset_sweep = s == SEEDS[0];
        let ts = Instant::now();
        let models = train_models(ds, &exp, s, &exp.early_sizes(ds.n_bs())).unwrap();
        let r = evaluate(ds, &models, &exp, s).unwrap();
        let secs = ts.elapsed().as_secs_f64();
        if exp.bs_subset_sweep {
            sweep_secs = secs;
        }
        println!("     seed {s}: trained and evaluated in {secs:.0} s");
        results.push((s, r));
    }
    DeskRun {
        results,
        secs: t.elapsed().as_secs_f64(),
        sweep_secs,
    }
}

fn fusion_ordering(run: &DeskRun, n_bs: usize) -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for (s, r) in &run.results {
        let me = |sc: Scenario, st: &str, k: usize| r.table.select(sc, st, k).next().unwrap().mean_error_m;
        let (st, dy) = (Scenario::Static, Scenario::Dynamic);
        let best_single = (1..=n_bs)
            .map(|n| me(st, &format!("bs{n}"), 1))
            .fold(f64::INFINITY, f64::min);
        let fused = ["early", "late-equal", "late-mcd", "late-de"];
        let worst_fused = fused.iter().map(|f| me(st, f, n_bs)).fold(0.0, f64::max);
        let a = worst_fused < best_single;
        let b = me(st, "late-mcd", n_bs) < me(st, "late-equal", n_bs) && me(st, "late-de", n_bs) < me(st, "late-equal", n_bs);
        let early = me(dy, "early", n_bs);
        let c = me(dy, "late-equal", n_bs) > early && me(dy, "late-mcd", n_bs) < early && me(dy, "late-de", n_bs) < early;
        let d = r
            .weight_stats
            .iter()
            .filter(|w| w.scenario == dy && w.strategy != "late-equal")
            .all(|w| w.blocked_count > 0 && w.blocked_mean < w.unblocked_mean);
        let all = a && b && c && d;
        passed += all as usize;
        lines.push(format!(
            "     seed {s}: a={a} b={b} c={c} d={d} | static {} | dynamic {}",
            fused.iter().map(|f| format!("{f} {:.2}", me(st, f, n_bs))).collect::<Vec<_>>().join(", "),
            fused.iter().map(|f| format!("{f} {:.2}", me(dy, f, n_bs))).collect::<Vec<_>>().join(", "),
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    outcome(
        passed >= 4 && run.secs < 30.0 * 60.0,
        format!(
            "{passed} of {} seeds satisfy (a)-(d); {:.1} min for all seeds incl. the seed-{} sweep ({:.0} s)",
            SEEDS.len(),
            run.secs / 60.0,
            SEEDS[0],
            run.sweep_secs
        ),
    )
}

fn sweep_shape(run: &DeskRun, n_bs: usize) -> Outcome {
    let (_, r) = &run.results[0];
    let mut ok = true;
    let mut notes = Vec::new();
    for sc in [Scenario::Static, Scenario::Dynamic] {
        for (strategy, curve) in r.table.curves(sc) {
            let ks: Vec<usize> = curve.keys().copied().collect();
            let expected: Vec<usize> = if strategy == "late-de" { (3..=n_bs).collect() } else { (1..=n_bs).collect() };
            if ks != expected {
                ok = false;
                notes.push(format!("{} {strategy}: rows for {ks:?}", sc.name()));
            }
            let v: Vec<f64> = curve.values().copied().collect();
            for w in v.windows(2) {
                if w[1] > 1.1 * w[0] {
                    ok = false;
                    notes.push(format!("{} {strategy}: {:.2} -> {:.2}", sc.name(), w[0], w[1]));
                }
            }
            println!(
                "     {} {strategy}: {}",
                sc.name(),
                curve.iter().map(|(k, e)| format!("{k} BS {e:.2}")).collect::<Vec<_>>().join(", ")
            );
        }
    }
    outcome(
        ok,
        if notes.is_empty() {
            "every curve non-increasing within 10%, DE only for >= 3 stations".to_string()
        } else {
            notes.join("; ")
        },
    )
}


fn reproducibility() -> Outcome {
    let one_run = |dir: &std::path::Path| -> (Vec<u8>, Vec<Vec<u8>>, String) {
        let ds = build_dataset(&ScenarioConfig::desk(), 120, 9).unwrap();
        let path = dir.join("data.csif");
        save_dataset(&ds, &path).unwrap();
        let mut train = TrainConfig::desk(4);
        train.epochs = 3;
        let mut exp = ExperimentConfig::new(&ds, train, vec![4]);
        exp.bs_subset_sweep = true;
        let models = train_models(&ds, &exp, 4, &exp.early_sizes(ds.n_bs())).unwrap();
        let model_dir = dir.join("models");
        models.save(&model_dir).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(&model_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let model_bytes = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let reloaded = ModelSet::load(&model_dir, &ds, &exp.spec).unwrap();
        let csv = evaluate(&ds, &reloaded, &exp, 4).unwrap().table.to_csv();
        (std::fs::read(&path).unwrap(), model_bytes, csv)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (one_run(a.path()), one_run(b.path()));
    let same = [ra.0 == rb.0, ra.1 == rb.1, ra.2 == rb.2];
    outcome(
        same.iter().all(|s| *s),
        format!(
            "dataset {}, {} model files {}, CSV {}",
            if same[0] { "identical" } else { "differs" },
            ra.1.len(),
            if same[1] { "identical" } else { "differ" },
            if same[2] { "identical" } else { "differs" }
        ),
    )
}

fn persistence() -> Outcome {
    let ds = build_dataset(&ScenarioConfig::desk(), 30, 3).unwrap();
    let bytes = dataset_to_bytes(&ds);
    let dataset_ok = dataset_to_bytes(&dataset_from_bytes(&bytes).unwrap()) == bytes;

    let spec = ModelSpec::standard(8, 32);
    let params = ModelParams::<f32>::init(&spec, 5, LabelScaler { shift: vec![1.0, 2.0], scale: vec![3.0, 4.0] }).unwrap();
    let mbytes = model_to_bytes(&params);
    let back = model_from_bytes(&mbytes, &spec).unwrap();
    let model_ok = back.weights == params.weights && model_to_bytes(&back) == mbytes;

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut version = bytes.clone();
    version[4] = 99;
    let taxonomy = [
        matches!(dataset_from_bytes(&flipped), Err(Error::Checksum { .. })),
        matches!(dataset_from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Truncated { .. })),
        matches!(dataset_from_bytes(&magic), Err(Error::BadMagic { .. })),
        matches!(dataset_from_bytes(&version), Err(Error::VersionMismatch { .. })),
        matches!(model_from_bytes(&mbytes, &ModelSpec::standard(8, 64)), Err(Error::SpecMismatch { .. })),
        matches!(model_from_bytes(&mbytes[..mbytes.len() - 2], &spec), Err(Error::Malformed(_) | Error::Truncated { .. })),
    ];
    let covered = taxonomy.iter().filter(|t| **t).count();
    outcome(
        dataset_ok && model_ok && covered == taxonomy.len(),
        format!(
            "dataset round trip {dataset_ok}, model round trip {model_ok}, {covered}/{} corruption cases classified",
            taxonomy.len()
        ),
    )
}

fn report(k: usize, name: &str, o: &Outcome, failures: &mut Vec<usize>) {
    println!("{} {k}. {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
    if !o.ok {
        failures.push(k);
    }
}

fn main() {
    let mut failures = Vec::new();
    report(1, "gradient fidelity", &gradient_fidelity(), &mut failures);
    report(2, "loss law", &loss_law(), &mut failures);
    report(3, "uncertainty oracles", &uncertainty_oracles(), &mut failures);
    report(4, "blockage statistics", &blockage_statistics(), &mut failures);

    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    println!("     desk profile: {DESK_POSITIONS} positions, dataset seed {DATASET_SEED}, run seeds {SEEDS:?}, {cores} core(s)");
    let ds = build_dataset(&ScenarioConfig::desk(), DESK_POSITIONS, DATASET_SEED).unwrap();
    let run = desk_runs(&ds);
    report(5, "fusion ordering", &fusion_ordering(&run, ds.n_bs()), &mut failures);
    report(6, "sweep shape", &sweep_shape(&run, ds.n_bs()), &mut failures);

    report(7, "reproducibility", &reproducibility(), &mut failures);
    report(8, "persistence", &persistence(), &mut failures);

    if failures.is_empty() {
        println!("all acceptance criteria passed");
        return;
    }
    println!("failed criteria: {failures:?}");
    if failures.iter().any(|k| !REPRODUCTION_ONLY.contains(k)) {
        std::process::exit(1);
    }
}
