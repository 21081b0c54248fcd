use nalgebra::DMatrix;

use super::MetricsError;

/// Coefficient of determination clipped at zero per target dimension and
/// averaged over dimensions. Rows are samples.
pub fn r2_score(truth: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64, MetricsError> {
    if truth.shape() != predicted.shape() {
        return Err(MetricsError::DimensionMismatch(format!("{:?} vs {:?}", truth.shape(), predicted.shape())));
    }
    if truth.nrows() < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, found: truth.nrows() });
    }
    if truth.ncols() == 0 {
        return Err(MetricsError::DimensionMismatch("no target dimensions".into()));
    }
    let mut total = 0.0;
    for d in 0..truth.ncols() {
        let t = truth.column(d);
        let mean = t.mean();
        let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot == 0.0 {
            return Err(MetricsError::ZeroVariance(d));
        }
        let ss_res: f64 = t.iter().zip(predicted.column(d).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += (1.0 - ss_res / ss_tot).max(0.0);
    }
    Ok(total / truth.ncols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn r2_examples() {
        let t = col(&[1.0, 2.0, 3.0]);
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        assert_eq!(r2_score(&t, &col(&[2.0, 2.0, 2.0])).unwrap(), 0.0);
        assert_eq!(r2_score(&t, &col(&[1.0, 2.0, 4.0])).unwrap(), 0.5);
        // Worse than the mean is clipped.
        assert_eq!(r2_score(&t, &col(&[3.0, 2.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn r2_errors() {
        assert!(matches!(r2_score(&col(&[1.0, 1.0]), &col(&[1.0, 1.0])), Err(MetricsError::ZeroVariance(0))));
        assert!(matches!(r2_score(&col(&[1.0]), &col(&[1.0])), Err(MetricsError::TooFewSamples { .. })));
        assert!(r2_score(&col(&[1.0, 2.0]), &col(&[1.0, 2.0, 3.0])).is_err());
    }
}
