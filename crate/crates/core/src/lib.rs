//! Compositional generative processes, the compositional contrast, and slot
//! identifiability measurement for object-centric autoencoders.
//!
//! The crate is organised bottom-up:
//!
//! * [`diff`]: a recording reverse-mode engine over scalars with dual-number
//!   Jacobians, so scalars built from Jacobian entries can be differentiated
//!   again.
//! * [`synth`]: latent sampling and the slot-wise ground-truth generator.
//! * [`analysis`]: index sets, mechanism ranks, (ir)reducibility checks and
//!   the compositional contrast with its normalized variants.
//! * [`training`]: the autoencoder, the reconstruction-plus-contrast
//!   objective, Adam and checkpoints.
//! * [`metrics`]: kernel ridge readouts, R², Hungarian matching and the slot
//!   identifiability score.
//! * [`experiment`]: configuration, seeded grid runs and CSV emission.

pub mod analysis;
pub mod diff;
pub mod experiment;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod synth;
pub mod training;

pub use analysis::{ContrastValue, ContrastVariant, IndexSets, RankReport};
pub use diff::{Dual, Graph, JacobianMatrix, Scalar, Var, VectorFn};
pub use metrics::{Assignment, ReadoutModel, SisReport};
pub use mlp::{Mlp, MlpShape};
pub use training::{AutoEncoderSpec, TrainConfig, TrainState};
pub use synth::{GeneratorSpec, LatentBatch, LatentDistribution, ObservationBatch, SlotLayout};

