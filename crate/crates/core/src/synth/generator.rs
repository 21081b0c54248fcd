use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::latent::{LatentBatch, ObservationBatch};
use super::{SlotLayout, SynthError};
use crate::diff::{leaky_relu_slope, Scalar, VectorFn};
use crate::mlp::{Mlp, MlpShape};
use crate::rng::{stream, stream_rng};

pub const DEFAULT_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub slots: usize,
    pub slot_dim: usize,
    pub slot_out: usize,
    /// Hidden width of the slot MLP; `None` means `slot_out`.
    pub hidden: Option<usize>,
    pub weight_range: f64,
    pub leaky_slope: f64,
}

impl GeneratorParams {
    pub fn new(slots: usize, slot_dim: usize, slot_out: usize) -> Self {
        GeneratorParams { slots, slot_dim, slot_out, hidden: None, weight_range: 10.0, leaky_slope: DEFAULT_SLOPE }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.slots == 0 || self.slot_dim == 0 {
            return Err(SynthError::InvalidParams("slot count and slot dimension must be positive".into()));
        }
        if self.slot_out <= self.slot_dim {
            return Err(SynthError::SlotOutputTooSmall { slot_out: self.slot_out, slot_dim: self.slot_dim });
        }
        if self.hidden == Some(0) {
            return Err(SynthError::InvalidParams("hidden width must be positive".into()));
        }
        if !(self.weight_range > 0.0 && self.weight_range.is_finite()) {
            return Err(SynthError::InvalidParams(format!("weight range {} must be positive", self.weight_range)));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return Err(SynthError::InvalidParams(format!("leaky slope {} must be positive", self.leaky_slope)));
        }
        Ok(())
    }
}

/// Compositional ground-truth generator: one two-layer MLP
/// (`M -> hidden -> slot_out`, LeakyReLU after the first layer) shared by all
/// slots, outputs concatenated slot by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    layout: SlotLayout,
    slot_out: usize,
    mlp: Mlp,
}

impl GeneratorSpec {
    /// Assembles a generator from an explicit slot network. Used for
    /// hand-built maps and deserialization; does not enforce `slot_out > M`.
    pub fn from_mlp(slots: usize, mlp: Mlp) -> Result<Self, SynthError> {
        let shape = mlp.shape();
        if shape.layer_count() != 2 || slots == 0 {
            return Err(SynthError::InvalidParams("slot network must have exactly two layers".into()));
        }
        let layout = SlotLayout::new(slots, shape.input_dim());
        let slot_out = shape.output_dim();
        Ok(GeneratorSpec { layout, slot_out, mlp })
    }

    pub fn layout(&self) -> SlotLayout {
        self.layout
    }

    pub fn slots(&self) -> usize {
        self.layout.slots
    }

    pub fn slot_dim(&self) -> usize {
        self.layout.slot_dim
    }

    pub fn slot_out(&self) -> usize {
        self.slot_out
    }

    pub fn hidden(&self) -> usize {
        self.mlp.shape().sizes[1]
    }

    pub fn leaky_slope(&self) -> f64 {
        self.mlp.slope()
    }

    /// Observed dimension `N = K * slot_out`.
    pub fn pixels(&self) -> usize {
        self.layout.slots * self.slot_out
    }

    pub fn slot_network(&self) -> &Mlp {
        &self.mlp
    }

    /// Pixel columns produced by slot `k`.
    pub fn pixel_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.slot_out..(k + 1) * self.slot_out
    }

    /// Renders every row of `z`.
    pub fn render(&self, z: &LatentBatch) -> Result<ObservationBatch, SynthError> {
        if z.data.ncols() != self.layout.dim() {
            return Err(SynthError::DimensionMismatch { expected: self.layout.dim(), found: z.data.ncols() });
        }
        Ok(ObservationBatch { data: self.render_matrix(&z.data), seed: z.seed })
    }

    /// Rows of `z` are samples; returns `n x N`.
    pub fn render_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let n = z.nrows();
        let mut x = DMatrix::<f64>::zeros(n, self.pixels());
        for k in 0..self.layout.slots {
            let slot = z.columns(k * self.layout.slot_dim, self.layout.slot_dim).transpose();
            let out = self.mlp.forward_batch(&slot);
            x.columns_mut(k * self.slot_out, self.slot_out).copy_from(&out.transpose());
        }
        x
    }

    /// Closed-form Jacobian at `z` (`N x KM`, block diagonal).
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let (m, s) = (self.layout.slot_dim, self.mlp.slope());
        let w1 = self.mlp.weight(0);
        let b1 = self.mlp.bias(0);
        let w2 = self.mlp.weight(1);
        let mut jac = DMatrix::<f64>::zeros(self.pixels(), self.layout.dim());
        for k in 0..self.layout.slots {
            let zk = nalgebra::DVector::from_column_slice(&z[self.layout.slot_range(k)]);
            let pre = &w1 * zk + &b1;
            let mut scaled = w1.clone();
            for (h, p) in pre.iter().enumerate() {
                scaled.row_mut(h).scale_mut(leaky_relu_slope(*p, s));
            }
            let block = &w2 * scaled;
            jac.view_mut((k * self.slot_out, k * m), (self.slot_out, m)).copy_from(&block);
        }
        jac
    }
}

impl VectorFn for GeneratorSpec {
    fn input_dim(&self) -> usize {
        self.layout.dim()
    }

    fn output_dim(&self) -> usize {
        self.pixels()
    }

    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        (0..self.layout.slots).flat_map(|k| self.mlp.apply(&z[self.layout.slot_range(k)])).collect()
    }
}

/// Builds the slot MLP with every weight and bias uniform on
/// `[-weight_range, weight_range]`.
pub fn build_generator(
    slots: usize,
    slot_dim: usize,
    slot_out: usize,
    seed: u64,
    weight_range: f64,
) -> Result<GeneratorSpec, SynthError> {
    let params = GeneratorParams { weight_range, ..GeneratorParams::new(slots, slot_dim, slot_out) };
    GeneratorSpec::build(&params, seed)
}

impl GeneratorSpec {
    pub fn build(params: &GeneratorParams, seed: u64) -> Result<Self, SynthError> {
        params.validate()?;
        let hidden = params.hidden.unwrap_or(params.slot_out);
        let shape = MlpShape::new(vec![params.slot_dim, hidden, params.slot_out]);
        let mut rng = stream_rng(seed, stream::GENERATOR);
        let mlp = Mlp::uniform(shape, params.leaky_slope, params.weight_range, &mut rng);
        Ok(GeneratorSpec { layout: SlotLayout::new(params.slots, params.slot_dim), slot_out: params.slot_out, mlp })
    }
}

/// Builds generators from `seed`, `seed + 1`, ... until one has a full-rank
/// Jacobian at every probe. Returns the generator and the seed that produced it.
pub fn build_invertible_generator(
    params: &GeneratorParams,
    seed: u64,
    probes: usize,
    max_attempts: usize,
) -> Result<(GeneratorSpec, u64), SynthError> {
    for attempt in 0..max_attempts as u64 {
        let candidate_seed = seed.wrapping_add(attempt);
        let gen = GeneratorSpec::build(params, candidate_seed)?;
        if super::validate::full_rank_at_probes(&gen, probes, candidate_seed)? {
            return Ok((gen, candidate_seed));
        }
        log::debug!("generator seed {candidate_seed} rejected: rank-deficient Jacobian");
    }
    Err(SynthError::NotInvertible { seed, attempts: max_attempts })
}
