use nalgebra::DMatrix;

use super::AnalysisError;
use crate::diff::{jacobian_values, VectorFn};
use crate::synth::SlotLayout;

/// Relative row-norm threshold below which a slot gradient counts as zero.
pub const DEFAULT_INDEX_THRESHOLD: f64 = 1e-6;

/// Pixels functionally depending on each slot at one latent point.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSets {
    pub sets: Vec<Vec<usize>>,
    pub threshold: f64,
    /// Set when every Jacobian entry is zero; `sets` are then all empty.
    pub degenerate: bool,
}

impl IndexSets {
    pub fn slot(&self, k: usize) -> &[usize] {
        &self.sets[k]
    }

    pub fn is_disjoint(&self) -> bool {
        self.overlapping_pixels().is_empty()
    }

    /// Pixels claimed by more than one slot, ascending.
    pub fn overlapping_pixels(&self) -> Vec<usize> {
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        for set in &self.sets {
            for &p in set {
                *counts.entry(p).or_default() += 1;
            }
        }
        counts.into_iter().filter(|&(_, c)| c > 1).map(|(p, _)| p).collect()
    }
}

/// Splits an `N x KM` Jacobian into `K` blocks of shape `N x M`.
pub fn split_blocks(jac: &DMatrix<f64>, layout: SlotLayout) -> Result<Vec<DMatrix<f64>>, AnalysisError> {
    if jac.ncols() != layout.dim() {
        return Err(AnalysisError::LayoutMismatch { expected: layout.dim(), found: jac.ncols() });
    }
    if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFiniteJacobian { row: i % jac.nrows(), col: i / jac.nrows() });
    }
    Ok((0..layout.slots).map(|k| jac.columns(k * layout.slot_dim, layout.slot_dim).into_owned()).collect())
}

/// Per-slot blocks `∂f/∂z_k` of `decoder` at `z_hat`, via the diff engine.
pub fn slot_jacobian_blocks<F: VectorFn>(
    decoder: &F,
    z_hat: &[f64],
    layout: SlotLayout,
) -> Result<Vec<DMatrix<f64>>, AnalysisError> {
    if z_hat.len() != layout.dim() {
        return Err(AnalysisError::LayoutMismatch { expected: layout.dim(), found: z_hat.len() });
    }
    split_blocks(&jacobian_values(decoder, z_hat)?, layout)
}

/// Pixel `n` belongs to slot `k` when the norm of row `n` of block `k`
/// exceeds `threshold` times the largest such norm over all pixels and slots.
pub fn pixel_index_sets(blocks: &[DMatrix<f64>], threshold: f64) -> Result<IndexSets, AnalysisError> {
    if !(threshold >= 0.0) {
        return Err(AnalysisError::NegativeThreshold(threshold));
    }
    let norms: Vec<Vec<f64>> = blocks.iter().map(|b| b.row_iter().map(|r| r.norm()).collect()).collect();
    let max = norms.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return Ok(IndexSets { sets: vec![Vec::new(); blocks.len()], threshold, degenerate: true });
    }
    let cutoff = threshold * max;
    let sets = norms
        .iter()
        .map(|slot| slot.iter().enumerate().filter(|&(_, &r)| r > cutoff).map(|(n, _)| n).collect())
        .collect();
    Ok(IndexSets { sets, threshold, degenerate: false })
}
