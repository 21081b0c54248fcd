use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// RBF bandwidth; `None` picks the median pairwise distance of the inputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub ridge: f64,
    /// Fit sets larger than this are truncated to their first rows.
    pub max_fit_points: usize,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig { bandwidth: None, ridge: 1e-3, max_fit_points: 2000 }
    }
}

/// Kernel ridge regression with a radial basis kernel
/// `k(a, b) = exp(-|a - b|^2 / (2 h^2))`. Rows are samples.
#[derive(Debug, Clone)]
pub struct ReadoutModel {
    bandwidth: f64,
    ridge: f64,
    inputs: DMatrix<f64>,
    dual: DMatrix<f64>,
}

/// Median of the pairwise Euclidean distances between distinct rows. Falls
/// back to 1 when every row coincides.
pub fn median_heuristic(inputs: &DMatrix<f64>) -> f64 {
    let n = inputs.nrows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(inputs, i, inputs, j).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum()
}

fn kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let scale = -0.5 / (bandwidth * bandwidth);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (scale * sq_dist(a, i, b, j)).exp())
}

/// Solves `(G + ridge I) alpha = targets`.
pub fn fit_readout(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    bandwidth: f64,
    ridge: f64,
) -> Result<ReadoutModel, MetricsError> {
    if inputs.nrows() != targets.nrows() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} input rows vs {} target rows",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if inputs.nrows() < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, found: inputs.nrows() });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite() && ridge > 0.0 && ridge.is_finite()) {
        return Err(MetricsError::InvalidHyperparameter);
    }
    if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut gram = kernel(inputs, inputs, bandwidth);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(gram).ok_or(MetricsError::Singular)?;
    let dual = chol.solve(targets);
    if dual.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Singular);
    }
    Ok(ReadoutModel { bandwidth, ridge, inputs: inputs.clone(), dual })
}

impl ReadoutModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn dual_coefficients(&self) -> &DMatrix<f64> {
        &self.dual
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
        if x.ncols() != self.inputs.ncols() {
            return Err(MetricsError::DimensionMismatch(format!(
                "model expects {} input dims, got {}",
                self.inputs.ncols(),
                x.ncols()
            )));
        }
        Ok(kernel(x, &self.inputs, self.bandwidth) * &self.dual)
    }
}
