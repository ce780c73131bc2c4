//! Dataset generation, persistence, the static/dynamic experiment runner and
//! report emission.

mod container;
mod dataset;
mod experiment;
mod report;

pub use container::{dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use dataset::{
    build_dataset, jittered_grid, make_test_csi, mean_error, BsRecord, Dataset, Record, Scenario, Split,
    TestObservation, TRAIN_FRACTION,
};
pub use experiment::{
    early_spec, early_train_seed, eval_seed, evaluate, per_bs_train_seed, run_experiment, train_models,
    DiagnosticRow, ExperimentConfig, ExperimentResult, ModelSet, WeightStat,
};
pub use report::{diagnostics_csv, emit_report, ReportFormat, ReportRow, ReportTable, CSV_HEADER};
