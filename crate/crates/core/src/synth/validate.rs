use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::generator::GeneratorSpec;
use super::SynthError;
use crate::analysis::{
    check_irreducibility_at, contrast_of_matrix, numerical_rank, pixel_index_sets, rows_rank, split_blocks, z_hash,
    IrreducibilityOptions, ANALYTIC_RANK_TOLERANCE, DEFAULT_INDEX_THRESHOLD,
};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationOptions {
    pub rank_tolerance: f64,
    pub index_threshold: f64,
    /// Bipartitions tested per slot and probe.
    pub partition_budget: usize,
    pub contrast_tolerance: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            rank_tolerance: ANALYTIC_RANK_TOLERANCE,
            index_threshold: DEFAULT_INDEX_THRESHOLD,
            partition_budget: 200,
            contrast_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// Jacobian rank below `K * M`; the map is not locally invertible.
    FullRank { rank: usize, expected: usize },
    MechanismRank { rank: usize, expected: usize },
    /// Pixels depending on more than one slot.
    Overlap { pixels: Vec<usize> },
    /// A bipartition with independent sub-mechanisms.
    Reducible { first: Vec<usize>, second: Vec<usize> },
    Contrast { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub probe: usize,
    pub z_hash: u64,
    pub slot: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorValidation {
    pub probes: usize,
    /// `[probe][slot]`
    pub mechanism_ranks: Vec<Vec<usize>>,
    pub bipartitions_tested: usize,
    pub max_contrast: f64,
    pub options: ValidationOptions,
    pub violations: Vec<Violation>,
}

impl GeneratorValidation {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Plain-text report: a summary header, then one line per violation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ranks: Vec<usize> = self.mechanism_ranks.iter().flatten().copied().collect();
        out.push_str(&format!("status={}\n", if self.passed() { "pass" } else { "fail" }));
        out.push_str(&format!("probes={}\n", self.probes));
        out.push_str(&format!(
            "mechanism_rank_min={} mechanism_rank_max={}\n",
            ranks.iter().min().copied().unwrap_or(0),
            ranks.iter().max().copied().unwrap_or(0)
        ));
        out.push_str(&format!("bipartitions_tested={}\n", self.bipartitions_tested));
        out.push_str(&format!("max_contrast={:e}\n", self.max_contrast));
        out.push_str(&format!(
            "rank_tolerance={:e} index_threshold={:e} partition_budget={}\n",
            self.options.rank_tolerance, self.options.index_threshold, self.options.partition_budget
        ));
        out.push_str(&format!("violations={}\n", self.violations.len()));
        for v in &self.violations {
            let slot = v.slot.map_or_else(|| "-".to_string(), |s| s.to_string());
            let detail = match &v.kind {
                ViolationKind::FullRank { rank, expected } => format!("full-rank rank={rank} expected={expected}"),
                ViolationKind::MechanismRank { rank, expected } => format!("mechanism-rank rank={rank} expected={expected}"),
                ViolationKind::Overlap { pixels } => format!("overlap pixels={pixels:?}"),
                ViolationKind::Reducible { first, second } => format!("reducible first={first:?} second={second:?}"),
                ViolationKind::Contrast { value } => format!("contrast value={value:e}"),
            };
            out.push_str(&format!("probe={} z={:016x} slot={} {}\n", v.probe, v.z_hash, slot, detail));
        }
        out
    }
}

fn probe_points(gen: &GeneratorSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, stream::PROBES);
    (0..count).map(|_| (0..gen.layout().dim()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn full_rank(jac: &DMatrix<f64>, tolerance: f64) -> Result<usize, SynthError> {
    Ok(numerical_rank(jac, tolerance)?.rank)
}

pub(crate) fn full_rank_at_probes(gen: &GeneratorSpec, probes: usize, seed: u64) -> Result<bool, SynthError> {
    for z in probe_points(gen, probes, seed) {
        if full_rank(&gen.jacobian(&z), ANALYTIC_RANK_TOLERANCE)? < gen.layout().dim() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks, at `probe_count` standard-normal latents, that the generator is
/// locally invertible and compositional, that every mechanism has rank `M`,
/// that sampled bipartitions of each mechanism are dependent, and that the
/// contrast vanishes. Failures are collected rather than returned as errors.
pub fn validate_generator(
    gen: &GeneratorSpec,
    probe_count: usize,
    seed: u64,
    options: &ValidationOptions,
) -> Result<GeneratorValidation, SynthError> {
    let layout = gen.layout();
    let mut report = GeneratorValidation {
        probes: probe_count,
        mechanism_ranks: Vec::with_capacity(probe_count),
        bipartitions_tested: 0,
        max_contrast: 0.0,
        options: *options,
        violations: Vec::new(),
    };
    for (probe, z) in probe_points(gen, probe_count, seed).into_iter().enumerate() {
        let hash = z_hash(&z);
        let mut violation = |slot, kind| report.violations.push(Violation { probe, z_hash: hash, slot, kind });
        let jac = gen.jacobian(&z);

        let rank = full_rank(&jac, options.rank_tolerance)?;
        if rank < layout.dim() {
            violation(None, ViolationKind::FullRank { rank, expected: layout.dim() });
        }
        let sets = pixel_index_sets(&split_blocks(&jac, layout)?, options.index_threshold)?;
        let overlap = sets.overlapping_pixels();
        if !overlap.is_empty() {
            violation(None, ViolationKind::Overlap { pixels: overlap });
        }
        let contrast = contrast_of_matrix(&jac, layout)?;
        if contrast > options.contrast_tolerance {
            violation(None, ViolationKind::Contrast { value: contrast });
        }
        report.max_contrast = report.max_contrast.max(contrast);

        let mut ranks = Vec::with_capacity(layout.slots);
        for k in 0..layout.slots {
            let pixels = sets.slot(k);
            let rank = if pixels.is_empty() { 0 } else { rows_rank(&jac, pixels, options.rank_tolerance)?.rank };
            ranks.push(rank);
            if rank != layout.slot_dim {
                violation(Some(k), ViolationKind::MechanismRank { rank, expected: layout.slot_dim });
            }
            if pixels.is_empty() {
                continue;
            }
            let irr = IrreducibilityOptions {
                budget: options.partition_budget,
                rank_tolerance: options.rank_tolerance,
                index_threshold: options.index_threshold,
                seed: seed ^ hash ^ k as u64,
            };
            let check = check_irreducibility_at(&jac, pixels, k, &irr)?;
            report.bipartitions_tested += check.tested;
            for (part, _) in check.counterexamples {
                violation(Some(k), ViolationKind::Reducible { first: part.first, second: part.second });
            }
        }
        report.mechanism_ranks.push(ranks);
    }
    Ok(report)
}
