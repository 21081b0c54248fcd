//! Slot identifiability measurement: kernel ridge readouts between slots,
//! non-negative R², Hungarian matching and the score `S = S1 - S2`.

mod hungarian;
mod r2;
mod readout;
mod sis;

pub use hungarian::{brute_force_assignment, hungarian, Assignment};
pub use r2::r2_score;
pub use readout::{fit_readout, median_heuristic, ReadoutConfig, ReadoutModel};
pub use sis::{sis, slot_mcc, SisReport, SisSplit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("target dimension {0} has zero variance")]
    ZeroVariance(usize),
    #[error("kernel system is singular; increase the ridge strength")]
    Singular,
    #[error("bandwidth and ridge must be positive and finite")]
    InvalidHyperparameter,
    #[error("score matrix must be square and finite")]
    InvalidScores,
    #[error("non-finite value in inputs")]
    NonFinite,
}
