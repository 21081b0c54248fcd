//! Fully connected LeakyReLU networks with a flat parameter vector.
//!
//! Parameters are stored layer by layer as the row-major weight matrix
//! (`out x in`) followed by the bias. Every layer except the last is followed
//! by a LeakyReLU.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{leaky_relu, leaky_relu_slope, Scalar, VectorFn};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    /// Layer widths from input to output, at least two entries.
    pub sizes: Vec<usize>,
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        MlpShape { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(fan_in, fan_out)` of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.sizes[l], self.sizes[l + 1])
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|i| self.sizes[i + 1] * (self.sizes[i] + 1)).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layer_offset(self.layer_count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
    slope: f64,
}

impl Mlp {
    pub fn new(shape: MlpShape, params: Vec<f64>, slope: f64) -> Self {
        assert_eq!(params.len(), shape.param_count(), "parameter count does not match shape");
        Mlp { shape, params, slope }
    }

    /// Every weight and bias uniform on `[-range, range]`.
    pub fn uniform<R: Rng>(shape: MlpShape, slope: f64, range: f64, rng: &mut R) -> Self {
        let params = (0..shape.param_count()).map(|_| rng.random_range(-range..=range)).collect();
        Mlp { shape, params, slope }
    }

    /// Weights and biases uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform<R: Rng>(shape: MlpShape, slope: f64, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(shape.param_count());
        for l in 0..shape.layer_count() {
            let (fan_in, fan_out) = shape.layer_dims(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_out * (fan_in + 1)).map(|_| rng.random_range(-bound..=bound)));
        }
        Mlp { shape, params, slope }
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        layer_weight(&self.shape, &self.params, l)
    }

    pub fn bias(&self, l: usize) -> DVector<f64> {
        layer_bias(&self.shape, &self.params, l)
    }

    /// Closed-form Jacobian `W_L D_{L-1} ... D_1 W_1` at `x`.
    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        let mut act = DVector::from_column_slice(x);
        let mut jac = DMatrix::<f64>::identity(x.len(), x.len());
        for l in 0..self.shape.layer_count() {
            let weight = self.weight(l);
            let pre = &weight * &act + self.bias(l);
            jac = weight * jac;
            if l + 1 < self.shape.layer_count() {
                for (r, &v) in pre.iter().enumerate() {
                    jac.row_mut(r).scale_mut(leaky_relu_slope(v, self.slope));
                }
                act = pre.map(|v| leaky_relu(v, self.slope));
            } else {
                act = pre;
            }
        }
        jac
    }

    /// Forward pass over a column-per-sample batch (`in x B` to `out x B`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        forward_batch(&self.shape, &self.params, self.slope, x)
    }
}

impl VectorFn for Mlp {
    fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.shape.output_dim()
    }

    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let mut act = z.to_vec();
        for l in 0..self.shape.layer_count() {
            let (fan_in, fan_out) = self.shape.layer_dims(l);
            let off = self.shape.layer_offset(l);
            let last = l + 1 == self.shape.layer_count();
            act = (0..fan_out)
                .map(|o| {
                    let row = &self.params[off + o * fan_in..off + (o + 1) * fan_in];
                    let terms: Vec<S> = act.iter().zip(row).map(|(a, &w)| a.scale(w)).collect();
                    let pre = S::sum(&terms).offset(self.params[off + fan_out * fan_in + o]);
                    if last {
                        pre
                    } else {
                        pre.leaky_relu(self.slope)
                    }
                })
                .collect();
        }
        act
    }
}

/// Forward pass with the parameters themselves as scalars, so gradients can
/// flow into them.
pub fn forward_with_params<S: Scalar>(shape: &MlpShape, params: &[S], slope: f64, x: &[S]) -> Vec<S> {
    let mut act = x.to_vec();
    for l in 0..shape.layer_count() {
        let (fan_in, fan_out) = shape.layer_dims(l);
        let off = shape.layer_offset(l);
        let last = l + 1 == shape.layer_count();
        act = (0..fan_out)
            .map(|o| {
                let mut terms: Vec<S> = act.iter().zip(&params[off + o * fan_in..]).map(|(&a, &w)| a * w).collect();
                terms.push(params[off + fan_out * fan_in + o]);
                let pre = S::sum(&terms);
                if last {
                    pre
                } else {
                    pre.leaky_relu(slope)
                }
            })
            .collect();
    }
    act
}

pub fn layer_weight(shape: &MlpShape, params: &[f64], l: usize) -> DMatrix<f64> {
    let (fan_in, fan_out) = shape.layer_dims(l);
    let off = shape.layer_offset(l);
    DMatrix::from_row_slice(fan_out, fan_in, &params[off..off + fan_out * fan_in])
}

pub fn layer_bias(shape: &MlpShape, params: &[f64], l: usize) -> DVector<f64> {
    let (fan_in, fan_out) = shape.layer_dims(l);
    let off = shape.layer_offset(l) + fan_in * fan_out;
    DVector::from_column_slice(&params[off..off + fan_out])
}

pub fn forward_batch(shape: &MlpShape, params: &[f64], slope: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut act = x.clone();
    for l in 0..shape.layer_count() {
        let mut pre = layer_weight(shape, params, l) * &act;
        let bias = layer_bias(shape, params, l);
        for mut col in pre.column_iter_mut() {
            col += &bias;
        }
        if l + 1 < shape.layer_count() {
            pre.apply(|v| *v = leaky_relu(*v, slope));
        }
        act = pre;
    }
    act
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference_jacobian, jacobian_values};

    #[test]
    fn param_layout() {
        let shape = MlpShape::new(vec![3, 4, 2]);
        assert_eq!(shape.param_count(), 4 * 3 + 4 + 2 * 4 + 2);
        assert_eq!(shape.layer_offset(1), 16);
    }

    #[test]
    fn batch_and_scalar_forward_agree() {
        let mut rng = crate::rng::stream_rng(3, 0);
        let mlp = Mlp::uniform(MlpShape::new(vec![3, 5, 4, 2]), 0.2, 1.0, &mut rng);
        let x = DMatrix::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.3);
        let batch = mlp.forward_batch(&x);
        for c in 0..4 {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            let single = mlp.eval(&col);
            for r in 0..2 {
                assert!((single[r] - batch[(r, c)]).abs() < 1e-12);
            }
            let with = forward_with_params(mlp.shape(), mlp.params(), 0.2, &col);
            assert!((with[0] - single[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(4, 0);
        let mlp = Mlp::uniform(MlpShape::new(vec![3, 6, 2]), 0.2, 1.0, &mut rng);
        let z = [0.3, -0.7, 1.1];
        let jac = jacobian_values(&mlp, &z).unwrap();
        let fd = finite_difference_jacobian(|p| mlp.eval(p), &z, 1e-6).unwrap();
        assert!((&jac - fd).amax() < 1e-6);
        assert!((mlp.jacobian_at(&z) - jac).amax() < 1e-12);
    }
}
