use nalgebra::DMatrix;

use super::DiffError;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`, one column per
/// input coordinate.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64], step: f64) -> Result<DMatrix<f64>, DiffError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(DiffError::InvalidStep(step));
    }
    let mut point = x.to_vec();
    let mut columns = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + step;
        let plus = f(&point);
        point[i] = x[i] - step;
        let minus = f(&point);
        point[i] = x[i];
        if plus.iter().chain(&minus).any(|v| !v.is_finite()) {
            return Err(DiffError::NonFiniteOutput { coordinate: i });
        }
        columns.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * step)).collect::<Vec<_>>());
    }
    let rows = columns.first().map_or_else(|| f(x).len(), Vec::len);
    Ok(DMatrix::from_fn(rows, x.len(), |r, c| columns[c][r]))
}

/// Central-difference gradient of a scalar function.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>, DiffError>
where
    F: Fn(&[f64]) -> f64,
{
    let jac = finite_difference_jacobian(|p| vec![f(p)], x, step)?;
    Ok(jac.row(0).iter().copied().collect())
}
