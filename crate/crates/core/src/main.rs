//! Command-line front end: dataset generation, training, evaluation, the
//! station-count sweep and a self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use csifuse::config::ScenarioConfig;
use csifuse::fusion::FusionStrategy;
use csifuse::harness::{
    build_dataset, diagnostics_csv, emit_report, evaluate, load_dataset, run_experiment, save_dataset, train_models,
    Dataset, ExperimentConfig, ModelSet, ReportFormat, Scenario,
};
use csifuse::neural::TrainConfig;
use csifuse::Result;

#[derive(Parser)]
#[command(name = "csifuse", version, about = "Multi-BS CSI fingerprint localization with uncertainty-weighted fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

impl Profile {
    fn scenario(self) -> ScenarioConfig {
        match self {
            Profile::Desk => ScenarioConfig::desk(),
            Profile::Paper => ScenarioConfig::paper(),
        }
    }

    fn positions(self) -> usize {
        match self {
            Profile::Desk => 2000,
            Profile::Paper => 10_000,
        }
    }

    fn train(self, seed: u64) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(seed),
            Profile::Paper => TrainConfig::paper(seed),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Static,
    Dynamic,
    Both,
}

impl ScenarioArg {
    fn list(self) -> Vec<Scenario> {
        match self {
            ScenarioArg::Static => vec![Scenario::Static],
            ScenarioArg::Dynamic => vec![Scenario::Dynamic],
            ScenarioArg::Both => vec![Scenario::Static, Scenario::Dynamic],
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Run seed (training, test noise, blockage, MC passes).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Training defaults.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Experiment overrides as `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample positions and simulate every station's channel.
    Generate {
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
        /// Scenario file (`key = value`), overriding the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of positions; defaults to the profile's.
        #[arg(long)]
        positions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the per-station models and the all-station early model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Also train early models for every leading subset of stations.
        #[arg(long)]
        sweep: bool,
        /// Output directory for the model files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved models and write a CSV report (plus SVG charts).
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        scenario: ScenarioArg,
        /// Strategy to evaluate (repeatable); all by default.
        #[arg(long)]
        strategy: Vec<FusionStrategy>,
        /// Also evaluate leading station subsets (needs `train --sweep`).
        #[arg(long)]
        sweep: bool,
        /// Per-sample weight diagnostics CSV.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Report CSV path; charts are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every strategy for 1..N stations.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "both")]
        scenario: ScenarioArg,
        #[arg(long)]
        strategy: Vec<FusionStrategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient checks and closed-form oracles.
    Selftest,
}

fn experiment(ds: &Dataset, run: &RunArgs) -> Result<ExperimentConfig> {
    let mut exp = ExperimentConfig::new(ds, run.profile.train(run.seed), vec![run.seed]);
    if let Some(path) = &run.config {
        exp.apply_text(&std::fs::read_to_string(path)?)?;
    }
    if let Some(e) = run.epochs {
        exp.train.epochs = e;
    }
    Ok(exp)
}

fn write_reports(table: &csifuse::harness::ReportTable, out: &Path) -> Result<()> {
    for f in emit_report(table, ReportFormat::Csv, out)?
        .into_iter()
        .chain(emit_report(table, ReportFormat::Svg, out)?)
    {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            profile,
            config,
            seed,
            positions,
            out,
        } => {
            let cfg = match config {
                Some(path) => ScenarioConfig::from_file(path)?,
                None => profile.scenario(),
            };
            let ds = build_dataset(&cfg, positions.unwrap_or(profile.positions()), seed)?;
            save_dataset(&ds, &out)?;
            println!("wrote {} ({} positions, {} stations)", out.display(), ds.len(), ds.n_bs());
        }
        Command::Train { run, sweep, out } => {
            let ds = load_dataset(&run.dataset)?;
            let mut exp = experiment(&ds, &run)?;
            exp.bs_subset_sweep |= sweep;
            let models = train_models(&ds, &exp, run.seed, &exp.early_sizes(ds.n_bs()))?;
            models.save(&out)?;
            for (name, losses) in &models.epoch_losses {
                println!("{name}: final training loss {:.4}", losses.last().copied().unwrap_or(f64::NAN));
            }
            println!("wrote models to {}", out.display());
        }
        Command::Evaluate {
            run,
            models,
            scenario,
            strategy,
            sweep,
            diagnostics,
            out,
        } => {
            let ds = load_dataset(&run.dataset)?;
            let mut exp = experiment(&ds, &run)?;
            exp.scenarios = scenario.list();
            if !strategy.is_empty() {
                exp.strategies = strategy;
            }
            exp.bs_subset_sweep |= sweep;
            exp.collect_diagnostics = diagnostics.is_some();
            let set = ModelSet::load(&models, &ds, &exp.spec)?;
            let result = evaluate(&ds, &set, &exp, run.seed)?;
            print!("{}", result.table.to_csv());
            write_reports(&result.table, &out)?;
            if let Some(path) = diagnostics {
                std::fs::write(&path, diagnostics_csv(&result.diagnostics))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep {
            run,
            scenario,
            strategy,
            out,
        } => {
            let ds = load_dataset(&run.dataset)?;
            let mut exp = experiment(&ds, &run)?;
            exp.scenarios = scenario.list();
            if !strategy.is_empty() {
                exp.strategies = strategy;
            }
            exp.bs_subset_sweep = true;
            let result = run_experiment(&ds, &exp)?;
            if let Some(msg) = &result.aborted {
                eprintln!("warning: incomplete run: {msg}");
            }
            print!("{}", result.table.to_csv());
            write_reports(&result.table, &out)?;
        }
        Command::Selftest => {
            if !csifuse::selftest::run(&mut std::io::stdout())? {
                return Err(csifuse::Error::InvalidArgument("self-test failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
