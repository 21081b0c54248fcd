//! Experiment configuration, seeded grid runs, CSV emission and post-hoc
//! analysis of trained models.

mod analyze;
mod config;
mod grid;
mod oracle;
mod plotdata;
mod validate;

use std::path::PathBuf;

pub use analyze::{analyze_checkpoint, analyze_generator, analyze_model, AnalyzeOptions, StructureReport};
pub use config::{
    merge_toml, ExperimentConfig, GeneratorSection, GridSection, LatentSection, OutputSection, Preset, RunSpec,
    ValidationSection,
};
pub use grid::{
    execute_run, read_history, read_record, run_dir, run_grid, run_inputs, write_atomic, write_combined, GridOutcome,
    RunRecord, RunStatus, CHECKPOINT_FILE, GENERATOR_FILE, HISTORY_FILE, METRICS_FILE, RECORD_FILE, RESULTS_COLUMNS,
    RESULTS_FILE, RUNS_DIR, SPEC_FILE, STANDARDIZER_FILE, SUMMARY_FILE,
};
pub use oracle::{oracle_pipeline, OracleConfig, OracleReport};
pub use plotdata::{read_plot_points, write_plot_data, PlotPoint, PLOT_COLUMNS};
pub use validate::{checks_passed, checks_to_text, validate_config_generators, GeneratorCheck};

use crate::analysis::AnalysisError;
use crate::metrics::MetricsError;
use crate::synth::SynthError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed results: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
