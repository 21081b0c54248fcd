use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;

use super::rank::{check_independence, Dependence, IndependenceCheck};
use super::structure::{pixel_index_sets, split_blocks, DEFAULT_INDEX_THRESHOLD};
use super::{AnalysisError, ANALYTIC_RANK_TOLERANCE};
use crate::diff::{jacobian_values, VectorFn};
use crate::rng::{stream, stream_rng};
use crate::synth::SlotLayout;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrreducibilityOptions {
    /// Maximum number of bipartitions tested per slot.
    pub budget: usize,
    pub rank_tolerance: f64,
    pub index_threshold: f64,
    pub seed: u64,
}

impl Default for IrreducibilityOptions {
    fn default() -> Self {
        IrreducibilityOptions {
            budget: 200,
            rank_tolerance: ANALYTIC_RANK_TOLERANCE,
            index_threshold: DEFAULT_INDEX_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bipartition {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrreducibilityReport {
    pub slot: usize,
    pub pixels: Vec<usize>,
    pub tested: usize,
    /// Every bipartition of `pixels` was tested.
    pub exhaustive: bool,
    /// Bipartitions whose sub-mechanisms tested independent.
    pub counterexamples: Vec<(Bipartition, IndependenceCheck)>,
}

impl IrreducibilityReport {
    /// No tested bipartition split the mechanism into independent parts.
    pub fn irreducible(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Bipartitions are encoded by which of the first `p - 1` pixels go to the
/// first part; the last pixel always lands in the second part, so each
/// unordered split appears once and both parts are nonempty.
fn split(pixels: &[usize], in_first: impl Fn(usize) -> bool) -> Bipartition {
    let last = pixels.len() - 1;
    let (mut first, mut second) = (Vec::new(), vec![]);
    for (i, &p) in pixels.iter().enumerate() {
        if i < last && in_first(i) {
            first.push(p);
        } else {
            second.push(p);
        }
    }
    Bipartition { first, second }
}

fn bipartitions(pixels: &[usize], budget: usize, seed: u64) -> (Vec<Bipartition>, bool) {
    let free = pixels.len().saturating_sub(1);
    if free == 0 || budget == 0 {
        return (Vec::new(), free == 0);
    }
    let total = if free < 64 { Some((1u64 << free) - 1) } else { None };
    if let Some(total) = total.filter(|&t| t <= budget as u64) {
        let parts = (1..=total).map(|mask| split(pixels, |i| mask >> i & 1 == 1)).collect();
        return (parts, true);
    }
    let mut rng = stream_rng(seed, stream::PARTITIONS);
    let mut seen = HashSet::with_capacity(budget);
    let mut parts = Vec::with_capacity(budget);
    while parts.len() < budget {
        let assignment: Vec<bool> = (0..free).map(|_| rng.random::<bool>()).collect();
        if !assignment.iter().any(|&b| b) || !seen.insert(assignment.clone()) {
            continue;
        }
        parts.push(split(pixels, |i| assignment[i]));
    }
    (parts, false)
}

/// Tests sampled bipartitions of the mechanism on `pixels` (rows of `jac`).
/// Exhaustive when the number of bipartitions fits in the budget.
pub fn check_irreducibility_at(
    jac: &DMatrix<f64>,
    pixels: &[usize],
    slot: usize,
    options: &IrreducibilityOptions,
) -> Result<IrreducibilityReport, AnalysisError> {
    if pixels.is_empty() {
        return Err(AnalysisError::EmptySubset);
    }
    let (parts, exhaustive) = bipartitions(pixels, options.budget, options.seed);
    let mut counterexamples = Vec::new();
    for part in &parts {
        let check = check_independence(&part.first, &part.second, jac, options.rank_tolerance)?;
        if check.verdict == Dependence::Independent {
            counterexamples.push((part.clone(), check));
        }
    }
    Ok(IrreducibilityReport { slot, pixels: pixels.to_vec(), tested: parts.len(), exhaustive, counterexamples })
}

/// Irreducibility of slot `slot`'s mechanism of `map` at `z`.
pub fn check_irreducibility<F: VectorFn>(
    map: &F,
    z: &[f64],
    layout: SlotLayout,
    slot: usize,
    options: &IrreducibilityOptions,
) -> Result<IrreducibilityReport, AnalysisError> {
    let jac = jacobian_values(map, z)?;
    let sets = pixel_index_sets(&split_blocks(&jac, layout)?, options.index_threshold)?;
    check_irreducibility_at(&jac, sets.slot(slot), slot, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Scalar;

    struct Duplicate;
    impl VectorFn for Duplicate {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
            vec![z[0], z[0]]
        }
    }

    struct Identity2;
    impl VectorFn for Identity2 {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
            z.to_vec()
        }
    }

    #[test]
    fn duplicated_pixel_is_irreducible() {
        let report =
            check_irreducibility(&Duplicate, &[0.5], SlotLayout::new(1, 1), 0, &IrreducibilityOptions::default()).unwrap();
        assert_eq!(report.tested, 1);
        assert!(report.exhaustive);
        assert!(report.irreducible());
    }

    #[test]
    fn separable_slot_is_reducible() {
        let report = check_irreducibility(&Identity2, &[0.5, -0.1], SlotLayout::new(1, 2), 0, &IrreducibilityOptions::default())
            .unwrap();
        assert!(!report.irreducible());
        let (part, check) = &report.counterexamples[0];
        assert_eq!((part.first.clone(), part.second.clone()), (vec![0], vec![1]));
        assert_eq!(check.rank_union, 2);
    }

    #[test]
    fn enumeration_counts() {
        let pixels: Vec<usize> = (0..5).collect();
        let (parts, exhaustive) = bipartitions(&pixels, 200, 0);
        assert!(exhaustive);
        assert_eq!(parts.len(), 15);
        let unique: HashSet<_> = parts.iter().collect();
        assert_eq!(unique.len(), 15);

        let pixels: Vec<usize> = (0..20).collect();
        let (parts, exhaustive) = bipartitions(&pixels, 200, 3);
        assert!(!exhaustive);
        assert_eq!(parts.len(), 200);
        assert_eq!(parts.iter().collect::<HashSet<_>>().len(), 200);
        assert!(parts.iter().all(|p| !p.first.is_empty() && !p.second.is_empty() && p.first.len() + p.second.len() == 20));
        assert_eq!(parts, bipartitions(&pixels, 200, 3).0);
    }
}
