use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::diff::{jacobian_values, JacobianMatrix, Scalar, Var, VectorFn};
use crate::synth::SlotLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastVariant {
    Raw,
    SlotNormalized,
    GradientNormalized,
    /// Raw contrast of `J / rho` with `rho^2 = |J|_F^2 / N`, the mean squared
    /// pixel-gradient norm. Invariant to rescaling the latent space.
    ScaleNormalized,
}

impl ContrastVariant {
    pub const ALL: [ContrastVariant; 4] = [
        ContrastVariant::Raw,
        ContrastVariant::SlotNormalized,
        ContrastVariant::GradientNormalized,
        ContrastVariant::ScaleNormalized,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ContrastVariant::Raw => "raw",
            ContrastVariant::SlotNormalized => "slot-normalized",
            ContrastVariant::GradientNormalized => "gradient-normalized",
            ContrastVariant::ScaleNormalized => "scale-normalized",
        }
    }
}

impl std::fmt::Display for ContrastVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastValue {
    pub value: f64,
    pub variant: ContrastVariant,
}

impl ContrastValue {
    pub fn raw(value: f64) -> Self {
        ContrastValue { value, variant: ContrastVariant::Raw }
    }
}

/// `sum_{k<j} r_k r_j` for one pixel's slot-gradient norms, `None` when no
/// pair exists.
fn pair_products<S: Scalar>(norms: &[S]) -> Option<S> {
    let mut terms = Vec::with_capacity(norms.len() * norms.len().saturating_sub(1) / 2);
    for k in 0..norms.len() {
        for j in k + 1..norms.len() {
            terms.push(norms[k] * norms[j]);
        }
    }
    (!terms.is_empty()).then(|| S::sum(&terms))
}

/// Per-pixel term of the gradient-normalized variant: norms divided by their
/// mean `m` and the pixel weighted by `m`, which reduces to
/// `sum_{k<j} r_k r_j / m`. Pixels with `m = 0` contribute nothing.
fn normalized_pair_products<S: Scalar>(norms: &[S]) -> Option<S> {
    let mean = S::sum(norms).scale(1.0 / norms.len() as f64);
    if mean.value() == 0.0 {
        return None;
    }
    let normalized: Vec<S> = norms.iter().map(|&r| r / mean).collect();
    pair_products(&normalized).map(|p| p * mean)
}

fn check_layout(cols: usize, layout: SlotLayout) -> Result<(), AnalysisError> {
    if cols != layout.dim() {
        return Err(AnalysisError::LayoutMismatch { expected: layout.dim(), found: cols });
    }
    Ok(())
}

fn row_norms(jac: &DMatrix<f64>, n: usize, layout: SlotLayout) -> Vec<f64> {
    (0..layout.slots).map(|k| jac.view((n, k * layout.slot_dim), (1, layout.slot_dim)).norm()).collect()
}

fn matrix_contrast(jac: &DMatrix<f64>, layout: SlotLayout, per_pixel: fn(&[f64]) -> Option<f64>) -> Result<f64, AnalysisError> {
    check_layout(jac.ncols(), layout)?;
    if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFiniteJacobian { row: i % jac.nrows(), col: i / jac.nrows() });
    }
    Ok((0..jac.nrows()).filter_map(|n| per_pixel(&row_norms(jac, n, layout))).sum())
}

/// Compositional contrast of a plain Jacobian (`N x KM`):
/// `sum_n sum_{k<j} |df_n/dz_k| |df_n/dz_j|`.
pub fn contrast_of_matrix(jac: &DMatrix<f64>, layout: SlotLayout) -> Result<f64, AnalysisError> {
    matrix_contrast(jac, layout, pair_products::<f64>)
}

pub fn contrast_gradient_normalized_of(jac: &DMatrix<f64>, layout: SlotLayout) -> Result<f64, AnalysisError> {
    matrix_contrast(jac, layout, normalized_pair_products::<f64>)
}

/// Raw contrast divided by `|J|_F^2 / N`; zero for a zero Jacobian.
pub fn contrast_scale_normalized_of(jac: &DMatrix<f64>, layout: SlotLayout) -> Result<f64, AnalysisError> {
    let raw = contrast_of_matrix(jac, layout)?;
    let scale = jac.norm_squared() / jac.nrows() as f64;
    Ok(if scale > 0.0 { raw / scale } else { 0.0 })
}

/// Any variant from a plain Jacobian.
pub fn contrast_variant_of(jac: &DMatrix<f64>, layout: SlotLayout, variant: ContrastVariant) -> Result<f64, AnalysisError> {
    match variant {
        ContrastVariant::Raw => contrast_of_matrix(jac, layout),
        ContrastVariant::SlotNormalized => {
            Ok(contrast_slot_normalized(ContrastValue::raw(contrast_of_matrix(jac, layout)?), layout.slots)?.value)
        }
        ContrastVariant::GradientNormalized => contrast_gradient_normalized_of(jac, layout),
        ContrastVariant::ScaleNormalized => contrast_scale_normalized_of(jac, layout),
    }
}

/// Differentiable raw contrast built from live Jacobian entries.
pub fn compositional_contrast_var<'g>(jac: &JacobianMatrix<'g>, layout: SlotLayout) -> Result<Var<'g>, AnalysisError> {
    contrast_var(jac, layout, ContrastVariant::Raw)
}

/// Differentiable contrast of any variant.
pub fn contrast_var<'g>(jac: &JacobianMatrix<'g>, layout: SlotLayout, variant: ContrastVariant) -> Result<Var<'g>, AnalysisError> {
    check_layout(jac.cols(), layout)?;
    let graph = match jac.outputs().first() {
        Some(v) => v.graph(),
        None => return Err(AnalysisError::EmptyMatrix),
    };
    let per_pixel = match variant {
        ContrastVariant::GradientNormalized => normalized_pair_products::<Var<'g>>,
        _ => pair_products::<Var<'g>>,
    };
    let mut terms = Vec::new();
    for n in 0..jac.rows() {
        let norms: Vec<Var<'g>> = (0..layout.slots).map(|k| Var::l2_norm(jac.row_block(n, layout.slot_range(k)))).collect();
        terms.extend(per_pixel(&norms));
    }
    let mut total = if terms.is_empty() { graph.constant(0.0)? } else { Var::sum(&terms) };
    if variant == ContrastVariant::SlotNormalized {
        if layout.slots < 2 {
            return Err(AnalysisError::TooFewSlots(layout.slots));
        }
        total = total.scale(1.0 / (layout.slots * layout.slots - layout.slots) as f64);
    }
    if variant == ContrastVariant::ScaleNormalized {
        let squares: Vec<Var<'g>> = (0..jac.rows())
            .flat_map(|n| jac.row_block(n, 0..jac.cols()).iter().map(|&e| e * e))
            .collect();
        let scale = Var::sum(&squares).scale(1.0 / jac.rows() as f64);
        if scale.value() > 0.0 {
            total = total / scale;
        }
    }
    graph.check()?;
    Ok(total)
}

/// Raw compositional contrast of `decoder` at `z_hat`.
pub fn compositional_contrast<F: VectorFn>(
    decoder: &F,
    z_hat: &[f64],
    layout: SlotLayout,
) -> Result<ContrastValue, AnalysisError> {
    check_layout(z_hat.len(), layout)?;
    Ok(ContrastValue::raw(contrast_of_matrix(&jacobian_values(decoder, z_hat)?, layout)?))
}

/// Divides by `K^2 - K` for comparisons across slot counts.
pub fn contrast_slot_normalized(raw: ContrastValue, slots: usize) -> Result<ContrastValue, AnalysisError> {
    if slots < 2 {
        return Err(AnalysisError::TooFewSlots(slots));
    }
    let factor = (slots * slots - slots) as f64;
    Ok(ContrastValue { value: raw.value / factor, variant: ContrastVariant::SlotNormalized })
}

/// Scale-invariant variant: per pixel, slot norms are divided by their mean
/// across slots and the pixel's term is weighted by that mean.
pub fn contrast_gradient_normalized<F: VectorFn>(
    decoder: &F,
    z_hat: &[f64],
    layout: SlotLayout,
) -> Result<ContrastValue, AnalysisError> {
    check_layout(z_hat.len(), layout)?;
    let value = contrast_gradient_normalized_of(&jacobian_values(decoder, z_hat)?, layout)?;
    Ok(ContrastValue { value, variant: ContrastVariant::GradientNormalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Graph;

    macro_rules! vector_fn {
        ($name:ident, $in:expr, $out:expr, |$z:ident| $body:expr) => {
            struct $name;
            impl VectorFn for $name {
                fn input_dim(&self) -> usize {
                    $in
                }
                fn output_dim(&self) -> usize {
                    $out
                }
                fn apply<S: Scalar>(&self, $z: &[S]) -> Vec<S> {
                    $body
                }
            }
        };
    }

    vector_fn!(Diagonal, 2, 2, |z| vec![z[0].scale(2.0), z[1].scale(3.0)]);
    vector_fn!(Mixed, 2, 2, |z| vec![z[0] + z[1], z[0]]);
    vector_fn!(Product, 2, 1, |z| vec![z[0] * z[1]]);
    vector_fn!(Equal, 2, 1, |z| vec![(z[0] + z[1]).scale(2.5)]);
    vector_fn!(Constant, 2, 2, |z| vec![z[0].lift(1.0), z[1].scale(2.0)]);

    const PAIR: SlotLayout = SlotLayout { slots: 2, slot_dim: 1 };

    #[test]
    fn raw_contrast_examples() {
        assert_eq!(compositional_contrast(&Diagonal, &[0.3, 0.4], PAIR).unwrap().value, 0.0);
        assert_eq!(compositional_contrast(&Mixed, &[0.3, 0.4], PAIR).unwrap().value, 1.0);
        assert_eq!(compositional_contrast(&Product, &[2.0, 3.0], PAIR).unwrap().value, 6.0);
    }

    #[test]
    fn slot_normalized_examples() {
        let norm = |v: f64, k: usize| contrast_slot_normalized(ContrastValue::raw(v), k).unwrap().value;
        assert_eq!(norm(6.0, 2), 3.0);
        assert_eq!(norm(0.0, 7), 0.0);
        assert_eq!(norm(20.0, 5), 1.0);
        assert!(matches!(contrast_slot_normalized(ContrastValue::raw(1.0), 1), Err(AnalysisError::TooFewSlots(1))));
    }

    #[test]
    fn gradient_normalized_examples() {
        assert_eq!(contrast_gradient_normalized(&Diagonal, &[0.1, 0.2], PAIR).unwrap().value, 0.0);
        let value = contrast_gradient_normalized(&Equal, &[0.1, 0.2], PAIR).unwrap().value;
        assert!((value - 2.5).abs() < 1e-12);
        // First pixel has zero gradient in every slot.
        assert_eq!(contrast_gradient_normalized(&Constant, &[0.1, 0.2], PAIR).unwrap().value, 0.0);
    }

    #[test]
    fn gradient_normalized_scales_only_through_the_weight() {
        let jac = |c: f64| DMatrix::from_row_slice(1, 2, &[c, 3.0 * c]);
        let a = contrast_gradient_normalized_of(&jac(1.0), PAIR).unwrap();
        let b = contrast_gradient_normalized_of(&jac(2.0), PAIR).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        // The raw contrast is quadratic in the scale.
        assert!((contrast_of_matrix(&jac(2.0), PAIR).unwrap() - 4.0 * contrast_of_matrix(&jac(1.0), PAIR).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scale_normalized_is_scale_invariant() {
        // Two pixels, J = [[1, 2], [0, 3]]: raw 2, |J|_F^2 / N = 7.
        let jac = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        assert!((contrast_scale_normalized_of(&jac, PAIR).unwrap() - 2.0 / 7.0).abs() < 1e-15);
        let scaled = &jac * 13.0;
        assert!((contrast_scale_normalized_of(&scaled, PAIR).unwrap() - 2.0 / 7.0).abs() < 1e-14);
        assert_eq!(contrast_scale_normalized_of(&DMatrix::zeros(2, 2), PAIR).unwrap(), 0.0);
    }

    #[test]
    fn differentiable_variants_match_plain_values() {
        let g = Graph::new();
        let z = g.variables(&[0.4, -1.3]).unwrap();
        let jac = crate::diff::jacobian(
            &g,
            |v: &[crate::diff::Dual<'_>]| vec![v[0] * v[1], v[0].sin() + v[1], v[1] * v[1]],
            &z,
        )
        .unwrap();
        for variant in ContrastVariant::ALL {
            let live = contrast_var(&jac, PAIR, variant).unwrap().value();
            let plain = contrast_variant_of(&jac.values(), PAIR, variant).unwrap();
            assert!((live - plain).abs() < 1e-12, "{variant}");
        }
    }

    #[test]
    fn differentiable_contrast_matches_plain_value() {
        let g = Graph::new();
        let z = g.variables(&[2.0, 3.0]).unwrap();
        let jac = crate::diff::jacobian_of(&g, &Product, &z).unwrap();
        let c = compositional_contrast_var(&jac, PAIR).unwrap();
        assert_eq!(c.value(), 6.0);
        // C = |z2| |z1| so dC/dz = (z2, z1) at positive z.
        assert_eq!(g.backward(c, &z).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        assert!(compositional_contrast(&Diagonal, &[0.1, 0.2], SlotLayout::new(1, 1)).is_err());
    }
}
