//! Recording reverse-mode differentiation over scalars.
//!
//! Expressions are written once against the [`Scalar`] trait and evaluated
//! with plain `f64`, with graph-backed [`Var`]s, or with [`Dual`] numbers whose
//! primal and tangent parts are both graph nodes. Jacobians are assembled from
//! dual tangents, one re-recording per input coordinate, so every Jacobian
//! entry stays differentiable and anything built from it can be passed to
//! [`Graph::backward`] again.

mod fd;
mod graph;
mod jacobian;
mod scalar;

pub use fd::{finite_difference_gradient, finite_difference_jacobian};
pub use graph::{DiffNode, Gradients, Graph, OpKind, Var};
pub use jacobian::{jacobian, jacobian_of, jacobian_values, JacobianMatrix};
pub use scalar::{leaky_relu, leaky_relu_slope, Dual, Scalar, VectorFn};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("non-finite value {value} produced by {op}")]
    NonFiniteValue { op: String, value: f64 },
    #[error("non-finite local partial {value} for {op}")]
    NonFinitePartial { op: String, value: f64 },
    #[error("{operands} operands but {partials} local partials")]
    PartialCount { operands: usize, partials: usize },
    #[error("node belongs to graph {found}, expected graph {expected}")]
    ForeignNode { expected: u64, found: u64 },
    #[error("node was never admitted into the graph")]
    InvalidNode,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite function output at perturbed point (coordinate {coordinate})")]
    NonFiniteOutput { coordinate: usize },
}

#[cfg(test)]
mod tests;
