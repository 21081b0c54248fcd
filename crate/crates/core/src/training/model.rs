use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::mlp::{forward_batch, Mlp, MlpShape};
use crate::rng::{stream, stream_rng};
use crate::synth::SlotLayout;

/// Encoder `N -> H -> H -> KM` and decoder `KM -> H -> H -> N`, both with
/// LeakyReLU hidden layers and linear outputs. The flat parameter vector holds
/// the encoder followed by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoEncoderSpec {
    pub pixels: usize,
    pub layout: SlotLayout,
    pub hidden: usize,
    pub slope: f64,
}

impl AutoEncoderSpec {
    pub fn new(pixels: usize, layout: SlotLayout) -> Self {
        AutoEncoderSpec { pixels, layout, hidden: 80, slope: crate::synth::DEFAULT_SLOPE }
    }

    pub fn with_hidden(self, hidden: usize) -> Self {
        AutoEncoderSpec { hidden, ..self }
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn encoder_shape(&self) -> MlpShape {
        MlpShape::new(vec![self.pixels, self.hidden, self.hidden, self.latent_dim()])
    }

    pub fn decoder_shape(&self) -> MlpShape {
        MlpShape::new(vec![self.latent_dim(), self.hidden, self.hidden, self.pixels])
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder_shape().param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_shape().param_count()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.pixels == 0 || self.hidden == 0 || self.layout.dim() == 0 {
            return Err(TrainError::InvalidConfig("autoencoder widths must be positive".into()));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(TrainError::InvalidConfig("leaky slope must be positive".into()));
        }
        Ok(())
    }

    pub fn check_params(&self, params: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.param_count() {
            return Err(TrainError::DimensionMismatch {
                expected: format!("{} parameters", self.param_count()),
                found: params.len().to_string(),
            });
        }
        Ok(())
    }

    /// `(encoder, decoder)` slices of a flat parameter vector.
    pub fn split<'a, T>(&self, params: &'a [T]) -> (&'a [T], &'a [T]) {
        params.split_at(self.encoder_param_count())
    }

    /// Fan-in uniform initialization from the `INIT` stream of `seed`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream::INIT);
        let enc = Mlp::fan_in_uniform(self.encoder_shape(), self.slope, &mut rng);
        let dec = Mlp::fan_in_uniform(self.decoder_shape(), self.slope, &mut rng);
        [enc.params(), dec.params()].concat()
    }

    pub fn encoder(&self, params: &[f64]) -> Mlp {
        Mlp::new(self.encoder_shape(), self.split(params).0.to_vec(), self.slope)
    }

    pub fn decoder(&self, params: &[f64]) -> Mlp {
        Mlp::new(self.decoder_shape(), self.split(params).1.to_vec(), self.slope)
    }

    /// Rows of `x` are samples; returns `n x KM`.
    pub fn encode(&self, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        forward_batch(&self.encoder_shape(), self.split(params).0, self.slope, &x.transpose()).transpose()
    }

    /// Rows of `z` are samples; returns `n x N`.
    pub fn decode(&self, params: &[f64], z: &DMatrix<f64>) -> DMatrix<f64> {
        forward_batch(&self.decoder_shape(), self.split(params).1, self.slope, &z.transpose()).transpose()
    }
}

/// Per-pixel affine standardization fitted on training observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(pixels: usize) -> Self {
        Standardizer { mean: vec![0.0; pixels], scale: vec![1.0; pixels] }
    }

    /// Column means and standard deviations of `x` (rows are samples).
    /// Constant columns keep scale 1.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.scale[c])
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] * self.scale[c] + self.mean[c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_mirror() {
        let spec = AutoEncoderSpec::new(40, SlotLayout::new(2, 3));
        assert_eq!(spec.encoder_shape().sizes, vec![40, 80, 80, 6]);
        assert_eq!(spec.decoder_shape().sizes, vec![6, 80, 80, 40]);
        assert_eq!(spec.encoder_shape().output_dim(), spec.decoder_shape().input_dim());
        let params = spec.init_params(3);
        assert_eq!(params.len(), spec.param_count());
        assert_eq!(params, spec.init_params(3));
        let bound = 1.0 / 40f64.sqrt();
        assert!(spec.split(&params).0[..80 * 40].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn standardizer_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let s = Standardizer::fit(&x);
        let y = s.apply(&x);
        assert!(y.column(0).mean().abs() < 1e-12);
        assert_eq!(s.scale[1], 1.0);
        assert!((s.invert(&y) - x).amax() < 1e-12);
    }
}
