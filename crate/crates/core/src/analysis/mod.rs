//! Jacobian structure: per-slot blocks and pixel index sets, numerical ranks
//! of (sub-)mechanisms, independence and irreducibility checks, and the
//! compositional contrast with its normalized variants.

mod contrast;
mod irreducibility;
mod rank;
mod records;
mod structure;

pub use contrast::{
    compositional_contrast, compositional_contrast_var, contrast_gradient_normalized, contrast_gradient_normalized_of,
    contrast_of_matrix, contrast_scale_normalized_of, contrast_slot_normalized, contrast_var, contrast_variant_of, ContrastValue, ContrastVariant,
};
pub use irreducibility::{
    check_irreducibility, check_irreducibility_at, Bipartition, IrreducibilityOptions, IrreducibilityReport,
};
pub use rank::{
    check_independence, numerical_rank, rows_rank, Dependence, IndependenceCheck, RankReport, ANALYTIC_RANK_TOLERANCE,
    LEARNED_RANK_TOLERANCE,
};
pub use records::{z_hash, ProbeRecord};
pub use structure::{pixel_index_sets, slot_jacobian_blocks, split_blocks, IndexSets, DEFAULT_INDEX_THRESHOLD};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Diff(#[from] crate::diff::DiffError),
    #[error("non-finite Jacobian entry at ({row}, {col})")]
    NonFiniteJacobian { row: usize, col: usize },
    #[error("Jacobian has {found} columns, slot layout needs {expected}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("rank of an empty matrix is undefined")]
    EmptyMatrix,
    #[error("singular value decomposition did not converge")]
    SvdNonConvergence,
    #[error("pixel sets must be nonempty")]
    EmptySubset,
    #[error("pixel sets overlap at index {0}")]
    OverlappingSubsets(usize),
    #[error("pixel index {index} out of range for {rows} rows")]
    PixelOutOfRange { index: usize, rows: usize },
    #[error("normalization by K^2 - K needs at least two slots, got {0}")]
    TooFewSlots(usize),
}
