use nalgebra::DMatrix;

use super::AnalysisError;

/// Relative tolerance for analytically constructed maps.
pub const ANALYTIC_RANK_TOLERANCE: f64 = 1e-8;
/// Relative tolerance for trained networks.
pub const LEARNED_RANK_TOLERANCE: f64 = 1e-4;

const SVD_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    /// Pixel rows the matrix was restricted to (empty when not applicable).
    pub subset: Vec<usize>,
    pub slot: Option<usize>,
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// Number of singular values above `rel_tolerance` times the largest one.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tolerance: f64) -> Result<RankReport, AnalysisError> {
    if matrix.is_empty() {
        return Err(AnalysisError::EmptyMatrix);
    }
    if let Some(i) = matrix.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFiniteJacobian { row: i % matrix.nrows(), col: i / matrix.nrows() });
    }
    let svd = nalgebra::SVD::try_new(matrix.clone(), false, false, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(AnalysisError::SvdNonConvergence)?;
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let largest = singular_values[0];
    let rank = if largest == 0.0 { 0 } else { singular_values.iter().filter(|&&s| s > rel_tolerance * largest).count() };
    Ok(RankReport { subset: Vec::new(), slot: None, rank, singular_values, tolerance: rel_tolerance })
}

/// Rank of the rows `rows` of `jac`.
pub fn rows_rank(jac: &DMatrix<f64>, rows: &[usize], rel_tolerance: f64) -> Result<RankReport, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::EmptySubset);
    }
    if let Some(&index) = rows.iter().find(|&&r| r >= jac.nrows()) {
        return Err(AnalysisError::PixelOutOfRange { index, rows: jac.nrows() });
    }
    let mut report = numerical_rank(&jac.select_rows(rows), rel_tolerance)?;
    report.subset = rows.to_vec();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependence {
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceCheck {
    pub verdict: Dependence,
    pub rank_union: usize,
    pub rank_first: usize,
    pub rank_second: usize,
}

/// Sub-mechanisms on `s1` and `s2` are independent when the rank of the
/// stacked rows equals the sum of the individual ranks.
pub fn check_independence(
    s1: &[usize],
    s2: &[usize],
    jac: &DMatrix<f64>,
    rel_tolerance: f64,
) -> Result<IndependenceCheck, AnalysisError> {
    if s1.is_empty() || s2.is_empty() {
        return Err(AnalysisError::EmptySubset);
    }
    if let Some(&p) = s1.iter().find(|p| s2.contains(p)) {
        return Err(AnalysisError::OverlappingSubsets(p));
    }
    let union: Vec<usize> = s1.iter().chain(s2).copied().collect();
    let rank_union = rows_rank(jac, &union, rel_tolerance)?.rank;
    let rank_first = rows_rank(jac, s1, rel_tolerance)?.rank;
    let rank_second = rows_rank(jac, s2, rel_tolerance)?.rank;
    let verdict = if rank_union == rank_first + rank_second { Dependence::Independent } else { Dependence::Dependent };
    Ok(IndependenceCheck { verdict, rank_union, rank_first, rank_second })
}
