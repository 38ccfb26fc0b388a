//! Dataset ingestion, preprocessing, grid sweeps and result files.
//!
//! Feature standardisation uses training statistics only. Target normalisation
//! divides by the largest absolute label over the whole dataset (train and
//! test), so the test labels do influence the scale.

mod config;
mod data;
mod fit;
mod output;
mod runner;

pub use config::{DeltaRule, EvalConfig, ExperimentConfig, Source};
pub use data::{load_csv, normalize_target, split, standardize, ColumnStats};
pub use fit::fit_loglog_slope;
pub use output::{curve_file_name, format_float, write_results, Manifest, WrittenFiles};
pub use runner::{
    cell_privacy, effective_trainer_config, grid_cells, prepare_data, run_experiment, theory_threshold, train_cell,
    Aggregate, Cell, CellMetrics, CellResult, PreparedData, RunResult,
};
