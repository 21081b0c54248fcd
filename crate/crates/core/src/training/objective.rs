use nalgebra::DMatrix;

use super::{AutoEncoderSpec, TrainError};
use crate::analysis::{contrast_var, ContrastVariant};
use crate::diff::{jacobian, leaky_relu, leaky_relu_slope, Dual, Graph, Scalar, Var};
use crate::mlp::{forward_with_params, layer_bias, layer_weight, MlpShape};
use crate::synth::SlotLayout;

/// Batch means of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub loss: f64,
    /// Mean over samples of `sum_n (x_hat_n - x_n)^2`.
    pub reconstruction: f64,
    /// Mean over samples of the contrast variant used in the loss.
    pub contrast: f64,
    pub samples: usize,
}

/// Pre-activations and activations of every layer, columns are samples.
struct Trace {
    pre: Vec<DMatrix<f64>>,
    act: Vec<DMatrix<f64>>,
}

fn forward_trace(shape: &MlpShape, params: &[f64], slope: f64, x: DMatrix<f64>) -> Trace {
    let layers = shape.layer_count();
    let mut pre = Vec::with_capacity(layers);
    let mut act = Vec::with_capacity(layers + 1);
    act.push(x);
    for l in 0..layers {
        let mut p = layer_weight(shape, params, l) * &act[l];
        let b = layer_bias(shape, params, l);
        for mut col in p.column_iter_mut() {
            col += &b;
        }
        let a = if l + 1 < layers { p.map(|v| leaky_relu(v, slope)) } else { p.clone() };
        pre.push(p);
        act.push(a);
    }
    Trace { pre, act }
}

/// Adds `d_out`'s parameter gradient into `grad` (same layout as `params`)
/// and returns the gradient with respect to the network input.
fn backward_trace(
    shape: &MlpShape,
    params: &[f64],
    slope: f64,
    trace: &Trace,
    d_out: DMatrix<f64>,
    grad: &mut [f64],
) -> DMatrix<f64> {
    let layers = shape.layer_count();
    let mut delta = d_out;
    for l in (0..layers).rev() {
        if l + 1 < layers {
            delta.zip_apply(&trace.pre[l], |d, p| *d *= leaky_relu_slope(p, slope));
        }
        let (fan_in, fan_out) = shape.layer_dims(l);
        let off = shape.layer_offset(l);
        let dw = &delta * trace.act[l].transpose();
        for o in 0..fan_out {
            for i in 0..fan_in {
                grad[off + o * fan_in + i] += dw[(o, i)];
            }
            grad[off + fan_out * fan_in + o] += delta.row(o).sum();
        }
        delta = layer_weight(shape, params, l).transpose() * &delta;
    }
    delta
}

/// Per-pixel contrast and `dC/dr_k` for one pixel's slot norms.
fn pixel_contrast(norms: &[f64], variant: ContrastVariant, coef: &mut [f64]) -> f64 {
    let k = norms.len();
    let total: f64 = norms.iter().sum();
    let sq: f64 = norms.iter().map(|r| r * r).sum();
    let pairs = 0.5 * (total * total - sq);
    match variant {
        ContrastVariant::Raw | ContrastVariant::SlotNormalized | ContrastVariant::ScaleNormalized => {
            for (c, r) in coef.iter_mut().zip(norms) {
                *c = total - r;
            }
            pairs
        }
        ContrastVariant::GradientNormalized => {
            let mean = total / k as f64;
            if mean == 0.0 {
                coef.iter_mut().for_each(|c| *c = 0.0);
                return 0.0;
            }
            for (c, r) in coef.iter_mut().zip(norms) {
                *c = (total - r) / mean - pairs / (mean * mean * k as f64);
            }
            pairs / mean
        }
    }
}

fn variant_factor(variant: ContrastVariant, layout: SlotLayout) -> f64 {
    match variant {
        ContrastVariant::SlotNormalized => 1.0 / (layout.slots * layout.slots - layout.slots) as f64,
        _ => 1.0,
    }
}

/// Decoder Jacobians at every column of `z`, stacked as `N x (KM * B)`, plus
/// the intermediate products needed for their weight gradients.
struct JacobianStack {
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
    jac: DMatrix<f64>,
}

fn decoder_jacobians(spec: &AutoEncoderSpec, dec: &[f64], dec_trace: &Trace) -> JacobianStack {
    let shape = spec.decoder_shape();
    let (h, d) = (spec.hidden, spec.latent_dim());
    let b = dec_trace.act[0].ncols();
    let w1 = layer_weight(&shape, dec, 0);
    let d1 = dec_trace.pre[0].map(|p| leaky_relu_slope(p, spec.slope));
    let d2 = dec_trace.pre[1].map(|p| leaky_relu_slope(p, spec.slope));
    let t1 = DMatrix::from_fn(h, d * b, |r, c| d1[(r, c / d)] * w1[(r, c % d)]);
    let mut t2 = layer_weight(&shape, dec, 1) * &t1;
    scale_rows_blockwise(&mut t2, &d2, d);
    let jac = layer_weight(&shape, dec, 2) * &t2;
    JacobianStack { d1, d2, t1, t2, jac }
}

/// Multiplies block `s` (columns `s*d..(s+1)*d`) row-wise by column `s` of `scale`.
fn scale_rows_blockwise(m: &mut DMatrix<f64>, scale: &DMatrix<f64>, d: usize) {
    for c in 0..m.ncols() {
        let s = c / d;
        for (v, f) in m.column_mut(c).iter_mut().zip(scale.column(s).iter()) {
            *v *= f;
        }
    }
}

/// Per-sample contrast values and, when `weight` is given, `weight * dC/dJ`.
fn contrast_terms(
    jac: &DMatrix<f64>,
    layout: SlotLayout,
    variant: ContrastVariant,
    weight: Option<f64>,
) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let (k, m, d) = (layout.slots, layout.slot_dim, layout.dim());
    let samples = jac.ncols() / d;
    let factor = variant_factor(variant, layout);
    let mut values = vec![0.0; samples];
    let mut grad = weight.map(|_| DMatrix::zeros(jac.nrows(), jac.ncols()));
    let mut norms = vec![0.0; k];
    let mut coef = vec![0.0; k];
    for s in 0..samples {
        let mut total = 0.0;
        for n in 0..jac.nrows() {
            for (slot, r) in norms.iter_mut().enumerate() {
                let base = s * d + slot * m;
                *r = (0..m).map(|i| jac[(n, base + i)].powi(2)).sum::<f64>().sqrt();
            }
            total += pixel_contrast(&norms, variant, &mut coef);
            if let (Some(g), Some(w)) = (grad.as_mut(), weight) {
                for slot in 0..k {
                    if norms[slot] == 0.0 {
                        continue;
                    }
                    let scale = w * factor * coef[slot] / norms[slot];
                    let base = s * d + slot * m;
                    for i in 0..m {
                        g[(n, base + i)] = scale * jac[(n, base + i)];
                    }
                }
            }
        }
        values[s] = total * factor;
        if variant == ContrastVariant::ScaleNormalized {
            let block = jac.columns(s * d, d);
            let scale = block.norm_squared() / jac.nrows() as f64;
            if scale > 0.0 {
                let c = values[s];
                values[s] = c / scale;
                if let (Some(g), Some(w)) = (grad.as_mut(), weight) {
                    let mut gb = g.columns_mut(s * d, d);
                    gb /= scale;
                    gb -= block * (2.0 * w * c / (scale * scale * jac.nrows() as f64));
                }
            }
        }
    }
    (values, grad)
}

fn check_inputs(spec: &AutoEncoderSpec, params: &[f64], x: &DMatrix<f64>, lambda: f64) -> Result<(), TrainError> {
    spec.check_params(params)?;
    if x.ncols() != spec.pixels {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} pixels", spec.pixels),
            found: x.ncols().to_string(),
        });
    }
    if x.nrows() == 0 {
        return Err(TrainError::InvalidConfig("empty batch".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TrainError::InvalidConfig(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(())
}

/// Mean contrast of the decoder over the columns of `z_hat` (`KM x B`),
/// returned per sample.
pub fn batch_contrast(
    spec: &AutoEncoderSpec,
    params: &[f64],
    z_hat: &DMatrix<f64>,
    variant: ContrastVariant,
) -> Result<Vec<f64>, TrainError> {
    spec.check_params(params)?;
    if variant == ContrastVariant::SlotNormalized && spec.layout.slots < 2 {
        return Err(TrainError::InvalidConfig("the slot-normalized contrast needs at least two slots".into()));
    }
    let dec = spec.split(params).1;
    let trace = forward_trace(&spec.decoder_shape(), dec, spec.slope, z_hat.clone());
    let stack = decoder_jacobians(spec, dec, &trace);
    let (values, _) = contrast_terms(&stack.jac, spec.layout, variant, None);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite("contrast"));
    }
    Ok(values)
}

/// Loss value without gradients. Rows of `x` are samples.
pub fn objective(
    spec: &AutoEncoderSpec,
    params: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    variant: ContrastVariant,
) -> Result<ObjectiveTerms, TrainError> {
    evaluate(spec, params, x, lambda, variant, None, true)
}

/// Loss and its gradient with respect to every parameter, written into `grad`.
///
/// The decoder Jacobian is `W3 D2 W2 D1 W1` with `D` the LeakyReLU slope
/// masks. The masks are locally constant in the inputs, so the contrast
/// reaches only the decoder weights; its gradient is propagated in closed form
/// through the stacked per-sample Jacobians.
pub fn objective_and_gradient(
    spec: &AutoEncoderSpec,
    params: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    variant: ContrastVariant,
    grad: &mut [f64],
) -> Result<ObjectiveTerms, TrainError> {
    if grad.len() != params.len() {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} gradient entries", params.len()),
            found: grad.len().to_string(),
        });
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    evaluate(spec, params, x, lambda, variant, Some(grad), lambda > 0.0)
}

fn evaluate(
    spec: &AutoEncoderSpec,
    params: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    variant: ContrastVariant,
    grad: Option<&mut [f64]>,
    with_contrast: bool,
) -> Result<ObjectiveTerms, TrainError> {
    check_inputs(spec, params, x, lambda)?;
    if variant == ContrastVariant::SlotNormalized && spec.layout.slots < 2 && with_contrast {
        return Err(TrainError::InvalidConfig("the slot-normalized contrast needs at least two slots".into()));
    }
    let (enc, dec) = spec.split(params);
    let (enc_shape, dec_shape) = (spec.encoder_shape(), spec.decoder_shape());
    let b = x.nrows();
    let xt = x.transpose();
    let enc_trace = forward_trace(&enc_shape, enc, spec.slope, xt.clone());
    let z_hat = enc_trace.act.last().unwrap().clone();
    let dec_trace = forward_trace(&dec_shape, dec, spec.slope, z_hat);
    let residual = dec_trace.act.last().unwrap() - &xt;
    let reconstruction = residual.norm_squared() / b as f64;

    let weight = lambda / b as f64;
    let mut contrast = 0.0;
    let mut contrast_grad = None;
    let mut stack = None;
    if with_contrast {
        let s = decoder_jacobians(spec, dec, &dec_trace);
        let want_grad = grad.is_some() && lambda > 0.0;
        let (values, g) = contrast_terms(&s.jac, spec.layout, variant, want_grad.then_some(weight));
        contrast = values.iter().sum::<f64>() / b as f64;
        contrast_grad = g;
        stack = Some(s);
    }
    let loss = reconstruction + lambda * contrast;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite("loss"));
    }

    if let Some(grad) = grad {
        let (genc, gdec) = grad.split_at_mut(spec.encoder_param_count());
        let d_out = residual * (2.0 / b as f64);
        let d_z = backward_trace(&dec_shape, dec, spec.slope, &dec_trace, d_out, gdec);
        backward_trace(&enc_shape, enc, spec.slope, &enc_trace, d_z, genc);
        if let (Some(g), Some(s)) = (contrast_grad, stack) {
            add_contrast_gradient(spec, dec, &s, &g, gdec);
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite("gradient"));
        }
    }
    Ok(ObjectiveTerms { loss, reconstruction, contrast, samples: b })
}

/// Backpropagates `g = dLoss/dJ` (stacked like the Jacobians) into the three
/// decoder weight matrices.
fn add_contrast_gradient(spec: &AutoEncoderSpec, dec: &[f64], s: &JacobianStack, g: &DMatrix<f64>, gdec: &mut [f64]) {
    let shape = spec.decoder_shape();
    let (h, d) = (spec.hidden, spec.latent_dim());
    let w2 = layer_weight(&shape, dec, 1);
    let w3 = layer_weight(&shape, dec, 2);

    let dw3 = g * s.t2.transpose();
    let mut dt2 = w3.transpose() * g;
    scale_rows_blockwise(&mut dt2, &s.d2, d);
    let dw2 = &dt2 * s.t1.transpose();
    let dt1 = w2.transpose() * &dt2;
    let mut dw1 = DMatrix::<f64>::zeros(h, d);
    for c in 0..dt1.ncols() {
        let (sample, i) = (c / d, c % d);
        for r in 0..h {
            dw1[(r, i)] += s.d1[(r, sample)] * dt1[(r, c)];
        }
    }

    for (l, dw) in [(0, dw1), (1, dw2), (2, dw3)] {
        let off = shape.layer_offset(l);
        let (fan_in, fan_out) = shape.layer_dims(l);
        debug_assert_eq!(dw.shape(), (fan_out, fan_in));
        for o in 0..fan_out {
            for i in 0..fan_in {
                gdec[off + o * fan_in + i] += dw[(o, i)];
            }
        }
    }
}

/// Mean over samples of `|mlp(x) - y|^2` and its parameter gradient, for
/// supervised fitting of a single network. Rows are samples.
pub fn regression_objective_and_gradient(
    shape: &MlpShape,
    params: &[f64],
    slope: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grad: &mut [f64],
) -> Result<f64, TrainError> {
    if params.len() != shape.param_count() || grad.len() != params.len() {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} parameters", shape.param_count()),
            found: format!("{} / {}", params.len(), grad.len()),
        });
    }
    if x.ncols() != shape.input_dim() || y.ncols() != shape.output_dim() || x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} -> {} with matching rows", shape.input_dim(), shape.output_dim()),
            found: format!("{:?} -> {:?}", x.shape(), y.shape()),
        });
    }
    let b = x.nrows() as f64;
    let trace = forward_trace(shape, params, slope, x.transpose());
    let residual = trace.act.last().unwrap() - y.transpose();
    let loss = residual.norm_squared() / b;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite("loss"));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    backward_trace(shape, params, slope, &trace, residual * (2.0 / b), grad);
    Ok(loss)
}

/// Reference implementation on the scalar tape: the decoder Jacobian is
/// recorded with dual numbers so the contrast stays differentiable, and a
/// single reverse sweep yields every parameter gradient.
pub fn objective_tape(
    spec: &AutoEncoderSpec,
    params: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    variant: ContrastVariant,
) -> Result<(ObjectiveTerms, Vec<f64>), TrainError> {
    check_inputs(spec, params, x, lambda)?;
    let graph = Graph::new();
    let vars = graph.variables(params)?;
    let (enc_vars, dec_vars) = spec.split(&vars);
    let (enc_shape, dec_shape) = (spec.encoder_shape(), spec.decoder_shape());
    let b = x.nrows();
    let mut rec_terms: Vec<Var<'_>> = Vec::new();
    let mut contrast_terms: Vec<Var<'_>> = Vec::new();
    for row in 0..b {
        let xs: Vec<Var<'_>> = x.row(row).iter().map(|&v| graph.constant(v)).collect::<Result<_, _>>()?;
        let z_hat = forward_with_params(&enc_shape, enc_vars, spec.slope, &xs);
        let jac = jacobian(
            &graph,
            |z: &[Dual<'_>]| {
                let p: Vec<Dual<'_>> = dec_vars.iter().map(|&v| Dual::constant(v)).collect();
                forward_with_params(&dec_shape, &p, spec.slope, z)
            },
            &z_hat,
        )?;
        for (out, &target) in jac.outputs().iter().zip(&xs) {
            let r = *out - target;
            rec_terms.push(r * r);
        }
        contrast_terms.push(contrast_var(&jac, spec.layout, variant)?);
    }
    let rec = Var::sum(&rec_terms).scale(1.0 / b as f64);
    let contrast = Var::sum(&contrast_terms).scale(1.0 / b as f64);
    let loss = rec + contrast.scale(lambda);
    graph.check()?;
    let grads = graph.gradients(loss)?;
    let grad = vars.iter().map(|&v| grads.wrt(v)).collect();
    Ok((
        ObjectiveTerms { loss: loss.value(), reconstruction: rec.value(), contrast: contrast.value(), samples: b },
        grad,
    ))
}
