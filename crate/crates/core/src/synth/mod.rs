//! Ground-truth generative process: Gaussian latents (independent or with a
//! Wishart-sampled covariance) rendered by one shared MLP applied slot-wise.

mod generator;
mod io;
pub(crate) mod latent;
mod validate;

pub use generator::{DEFAULT_SLOPE, build_generator, build_invertible_generator, GeneratorParams, GeneratorSpec};
pub use io::GENERATOR_MAGIC;
pub use latent::{sample_latents, sample_wishart_covariance, LatentBatch, LatentDistribution, LatentKind, ObservationBatch};
pub use validate::{validate_generator, GeneratorValidation, ValidationOptions, Violation, ViolationKind};

use serde::{Deserialize, Serialize};

/// `K` slots of dimension `M`; slot `k` occupies columns `[kM, (k+1)M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotLayout {
    pub slots: usize,
    pub slot_dim: usize,
}

impl SlotLayout {
    pub fn new(slots: usize, slot_dim: usize) -> Self {
        SlotLayout { slots, slot_dim }
    }

    pub fn dim(&self) -> usize {
        self.slots * self.slot_dim
    }

    pub fn slot_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.slot_dim..(k + 1) * self.slot_dim
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("Wishart degrees of freedom {dof} must be at least the dimension {dim}")]
    DegreesOfFreedom { dim: usize, dof: usize },
    #[error("covariance is not positive definite (Cholesky failed)")]
    NotPositiveDefinite,
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    InvalidCovariance(String),
    #[error("sample count must be at least 1")]
    EmptyBatch,
    #[error("slot output dimension {slot_out} must exceed slot dimension {slot_dim} for irreducible mechanisms")]
    SlotOutputTooSmall { slot_out: usize, slot_dim: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no invertible generator found after {attempts} seeds starting at {seed}")]
    NotInvertible { seed: u64, attempts: usize },
    #[error("generator file has bad magic bytes (expected SLOTGEN1)")]
    BadMagic,
    #[error("generator file is truncated")]
    Truncated,
    #[error("malformed generator export: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
}
