//! The slot autoencoder, its objective `|f(g(x)) - x|^2 + lambda * C(f, g(x))`,
//! Adam optimization with a step schedule, checkpoints and evaluation history.

mod adam;
mod checkpoint;
mod model;
mod objective;
mod train;

pub use adam::{adam_step, lr_schedule, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{AutoEncoderSpec, Standardizer};
pub use objective::{batch_contrast, objective, objective_and_gradient, objective_tape, regression_objective_and_gradient, ObjectiveTerms};
pub use train::{
    join_permutation, parse_permutation, read_history_csv, train, write_history_csv, EvalRecord, TrainConfig, TrainData, TrainOutcome, TrainState, Trainer,
    HISTORY_COLUMNS,
};

use crate::analysis::AnalysisError;
use crate::diff::DiffError;
use crate::metrics::MetricsError;
use crate::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, history: Vec<EvalRecord> },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("malformed history: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
