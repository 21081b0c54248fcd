use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SlotLayout, SynthError};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    Independent,
    Correlated,
}

impl std::fmt::Display for LatentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LatentKind::Independent => "independent",
            LatentKind::Correlated => "correlated",
        })
    }
}

/// Zero-mean Gaussian over the concatenated slot latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    kind: LatentKind,
    layout: SlotLayout,
    covariance: DMatrix<f64>,
}

impl LatentDistribution {
    pub fn independent(layout: SlotLayout) -> Self {
        let d = layout.dim();
        LatentDistribution { kind: LatentKind::Independent, layout, covariance: DMatrix::identity(d, d) }
    }

    /// Covariance drawn from `Wishart(I, K*M)`.
    pub fn correlated(layout: SlotLayout, seed: u64) -> Result<Self, SynthError> {
        let d = layout.dim();
        let covariance = sample_wishart_covariance(d, d, seed)?;
        Self::with_covariance(layout, covariance)
    }

    pub fn of_kind(kind: LatentKind, layout: SlotLayout, seed: u64) -> Result<Self, SynthError> {
        match kind {
            LatentKind::Independent => Ok(Self::independent(layout)),
            LatentKind::Correlated => Self::correlated(layout, seed),
        }
    }

    pub fn with_covariance(layout: SlotLayout, covariance: DMatrix<f64>) -> Result<Self, SynthError> {
        let d = layout.dim();
        if covariance.shape() != (d, d) {
            return Err(SynthError::DimensionMismatch { expected: d, found: covariance.ncols() });
        }
        if covariance != covariance.transpose() {
            return Err(SynthError::InvalidCovariance("not symmetric".into()));
        }
        let eig = SymmetricEigen::new(covariance.clone()).eigenvalues;
        let max = eig.max();
        if eig.min() < -1e-10 * max.abs().max(f64::MIN_POSITIVE) {
            return Err(SynthError::InvalidCovariance(format!("eigenvalue {} < 0", eig.min())));
        }
        let kind = if covariance == DMatrix::identity(d, d) { LatentKind::Independent } else { LatentKind::Correlated };
        Ok(LatentDistribution { kind, layout, covariance })
    }

    pub fn kind(&self) -> LatentKind {
        self.kind
    }

    pub fn layout(&self) -> SlotLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Rows are samples; `layout` gives the slot partition of the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub data: DMatrix<f64>,
    pub layout: SlotLayout,
    pub seed: Option<u64>,
}

impl LatentBatch {
    pub fn new(data: DMatrix<f64>, layout: SlotLayout) -> Result<Self, SynthError> {
        if data.ncols() != layout.dim() {
            return Err(SynthError::DimensionMismatch { expected: layout.dim(), found: data.ncols() });
        }
        Ok(LatentBatch { data, layout, seed: None })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Columns of slot `k` for every sample (`n x M`).
    pub fn slot(&self, k: usize) -> DMatrix<f64> {
        self.data.columns(k * self.layout.slot_dim, self.layout.slot_dim).into_owned()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> LatentBatch {
        LatentBatch { data: self.data.select_rows(rows), layout: self.layout, seed: self.seed }
    }
}

/// Rows are samples of the `N` observed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub data: DMatrix<f64>,
    pub seed: Option<u64>,
}

impl ObservationBatch {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }
}

/// `Wishart(I, dof)` sample via the Bartlett decomposition: `A` is lower
/// triangular with `A_ii ~ chi(dof - i)` and standard normal entries below the
/// diagonal, and the sample is `A A^T`.
pub fn sample_wishart_covariance(dim: usize, dof: usize, seed: u64) -> Result<DMatrix<f64>, SynthError> {
    if dim == 0 || dof < dim {
        return Err(SynthError::DegreesOfFreedom { dim, dof });
    }
    let mut rng = stream_rng(seed, stream::COVARIANCE);
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let chi2 = ChiSquared::new((dof - i) as f64).expect("positive degrees of freedom");
        a[(i, i)] = chi2.sample(&mut rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut sigma = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v: f64 = (0..=j).map(|l| a[(i, l)] * a[(j, l)]).sum();
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// `n` draws from `N(0, Sigma)` as `L g` with `L` the Cholesky factor.
pub fn sample_latents(n: usize, dist: &LatentDistribution, seed: u64) -> Result<LatentBatch, SynthError> {
    sample_latents_stream(n, dist, seed, stream::TRAIN_LATENTS)
}

pub(crate) fn sample_latents_stream(
    n: usize,
    dist: &LatentDistribution,
    seed: u64,
    stream_id: u64,
) -> Result<LatentBatch, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyBatch);
    }
    let d = dist.dim();
    let chol = Cholesky::new(dist.covariance.clone()).ok_or(SynthError::NotPositiveDefinite)?;
    let mut rng = stream_rng(seed, stream_id);
    let mut g = DMatrix::<f64>::zeros(d, n);
    for c in 0..n {
        for r in 0..d {
            g[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let samples = (chol.l() * g).transpose();
    Ok(LatentBatch { data: samples, layout: dist.layout, seed: Some(seed) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wishart_one_dim_mean_is_one() {
        let n = 100_000;
        let mean = (0..n).map(|s| sample_wishart_covariance(1, 1, s).unwrap()[(0, 0)]).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn wishart_mean_is_dof_times_identity() {
        let (dim, dof, n) = (3, 5, 20_000);
        let mut sum = DMatrix::<f64>::zeros(dim, dim);
        let mut sumsq = DMatrix::<f64>::zeros(dim, dim);
        for s in 0..n {
            let w = sample_wishart_covariance(dim, dof, s).unwrap();
            sumsq += w.component_mul(&w);
            sum += w;
        }
        let mean = &sum / n as f64;
        let var = &sumsq / n as f64 - mean.component_mul(&mean);
        for i in 0..dim {
            for j in 0..dim {
                let expected = if i == j { dof as f64 } else { 0.0 };
                let se = (var[(i, j)] / n as f64).sqrt();
                assert!((mean[(i, j)] - expected).abs() < 3.0 * se + 1e-12, "({i},{j}) {} vs {expected}", mean[(i, j)]);
            }
        }
    }

    #[test]
    fn wishart_is_symmetric_psd_and_validates_dof() {
        let w = sample_wishart_covariance(6, 6, 9).unwrap();
        assert_eq!(w, w.transpose());
        assert!(LatentDistribution::with_covariance(SlotLayout::new(2, 3), w).is_ok());
        assert!(matches!(sample_wishart_covariance(4, 3, 0), Err(SynthError::DegreesOfFreedom { .. })));
    }

    #[test]
    fn standard_normal_variance() {
        let dist = LatentDistribution::independent(SlotLayout::new(2, 1));
        let batch = sample_latents(100_000, &dist, 1).unwrap();
        for c in 0..2 {
            let col = batch.data.column(c);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((0.97..=1.03).contains(&var), "{var}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let dist = LatentDistribution::correlated(SlotLayout::new(2, 3), 4).unwrap();
        assert_eq!(sample_latents(50, &dist, 8).unwrap(), sample_latents(50, &dist, 8).unwrap());
        assert_ne!(sample_latents(50, &dist, 8).unwrap(), sample_latents(50, &dist, 9).unwrap());
        assert!(matches!(sample_latents(0, &dist, 8), Err(SynthError::EmptyBatch)));
    }

    #[test]
    fn correlated_pair_recovers_correlation() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let dist = LatentDistribution::with_covariance(SlotLayout::new(2, 1), cov).unwrap();
        let batch = sample_latents(100_000, &dist, 2).unwrap();
        let (a, b) = (batch.data.column(0), batch.data.column(1));
        let (ma, mb) = (a.mean(), b.mean());
        let cov: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!((corr - 0.5).abs() < 0.02, "{corr}");
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(LatentDistribution::with_covariance(SlotLayout::new(2, 1), cov).is_err());
    }
}
