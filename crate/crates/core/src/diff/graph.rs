use std::cell::RefCell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use super::DiffError;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Index used for values that could not be admitted into the graph.
const INVALID: u32 = u32::MAX;

/// The primitive that produced a node. Only used for introspection and error
/// messages; backward propagation reads the recorded local partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Variable,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Offset,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    LeakyRelu { slope: f64 },
    Norm,
    Sum,
    Custom(&'static str),
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
            OpKind::Custom(name) => f.write_str(name),
            other => write!(f, "{}", format!("{other:?}").to_lowercase()),
        }
    }
}

#[derive(Default)]
struct Tape {
    values: Vec<f64>,
    ops: Vec<OpKind>,
    /// `(start, len)` into `parents` / `partials`.
    edges: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    poison: Option<DiffError>,
}

/// Append-only recording of scalar operations.
///
/// Nodes are pushed after their operands, so the sequence is always in
/// topological order and a reverse sweep visits each node once. A graph may be
/// moved between threads but never shared; every [`Var`] borrows it.
pub struct Graph {
    id: u64,
    generation: u64,
    tape: RefCell<Tape>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("id", &self.id)
            .field("generation", &self.generation)
            .field("nodes", &self.len())
            .finish()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    index: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value())
    }
}

/// Owned snapshot of one recorded node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffNode {
    pub value: f64,
    pub op: OpKind,
    pub parents: Vec<usize>,
    pub local_partials: Vec<f64>,
    pub graph_id: u64,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
            tape: RefCell::new(Tape::default()),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Number of times the graph has been cleared.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node. Requires exclusive access, so no [`Var`] survives.
    pub fn clear(&mut self) {
        *self.tape.get_mut() = Tape::default();
        self.generation += 1;
    }

    /// The first error raised by an infallible operator, if any.
    pub fn poison(&self) -> Option<DiffError> {
        self.tape.borrow().poison.clone()
    }

    pub fn check(&self) -> Result<(), DiffError> {
        match self.poison() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// An independent input.
    pub fn variable(&self, value: f64) -> Result<Var<'_>, DiffError> {
        self.record(OpKind::Variable, &[], value, &[])
    }

    pub fn constant(&self, value: f64) -> Result<Var<'_>, DiffError> {
        self.record(OpKind::Constant, &[], value, &[])
    }

    pub fn variables(&self, values: &[f64]) -> Result<Vec<Var<'_>>, DiffError> {
        values.iter().map(|&v| self.variable(v)).collect()
    }

    /// Appends a node with explicit local partials `∂value/∂operand_i`.
    pub fn record<'g>(
        &'g self,
        op: OpKind,
        operands: &[Var<'g>],
        value: f64,
        local_partials: &[f64],
    ) -> Result<Var<'g>, DiffError> {
        if operands.len() != local_partials.len() {
            return Err(DiffError::PartialCount {
                operands: operands.len(),
                partials: local_partials.len(),
            });
        }
        for v in operands {
            self.owns(v)?;
            if v.index == INVALID {
                return Err(self.poison().unwrap_or(DiffError::InvalidNode));
            }
        }
        if !value.is_finite() {
            return Err(DiffError::NonFiniteValue { op: op.to_string(), value });
        }
        if let Some(&p) = local_partials.iter().find(|p| !p.is_finite()) {
            return Err(DiffError::NonFinitePartial { op: op.to_string(), value: p });
        }
        Ok(self.push_unchecked(op, operands, value, local_partials))
    }

    fn owns(&self, v: &Var<'_>) -> Result<(), DiffError> {
        if v.graph.id != self.id {
            return Err(DiffError::ForeignNode { expected: self.id, found: v.graph.id });
        }
        Ok(())
    }

    fn push_unchecked(&self, op: OpKind, operands: &[Var<'_>], value: f64, partials: &[f64]) -> Var<'_> {
        let mut tape = self.tape.borrow_mut();
        let start = tape.parents.len() as u32;
        tape.parents.extend(operands.iter().map(|v| v.index));
        tape.partials.extend_from_slice(partials);
        tape.edges.push((start, operands.len() as u32));
        tape.values.push(value);
        tape.ops.push(op);
        let index = (tape.values.len() - 1) as u32;
        assert!(index != INVALID, "graph exceeded u32 node capacity");
        Var { graph: self, index }
    }

    /// Infallible recording used by the operator overloads. Failures poison the
    /// graph and yield an invalid handle that propagates through later ops.
    pub(crate) fn apply<'g>(&'g self, op: OpKind, operands: &[Var<'g>], value: f64, partials: &[f64]) -> Var<'g> {
        match self.record(op, operands, value, partials) {
            Ok(v) => v,
            Err(e) => {
                let mut tape = self.tape.borrow_mut();
                if tape.poison.is_none() {
                    tape.poison = Some(e);
                }
                Var { graph: self, index: INVALID }
            }
        }
    }

    pub fn node(&self, v: Var<'_>) -> Result<DiffNode, DiffError> {
        self.owns(&v)?;
        if v.index == INVALID {
            return Err(DiffError::InvalidNode);
        }
        let tape = self.tape.borrow();
        let i = v.index as usize;
        let (start, len) = tape.edges[i];
        let range = start as usize..(start + len) as usize;
        Ok(DiffNode {
            value: tape.values[i],
            op: tape.ops[i],
            parents: tape.parents[range.clone()].iter().map(|&p| p as usize).collect(),
            local_partials: tape.partials[range].to_vec(),
            graph_id: self.id,
        })
    }

    /// Reverse accumulation from `output`; the adjoint of every node up to it.
    pub fn gradients<'g>(&'g self, output: Var<'g>) -> Result<Gradients<'g>, DiffError> {
        self.check()?;
        self.owns(&output)?;
        if output.index == INVALID {
            return Err(DiffError::InvalidNode);
        }
        let tape = self.tape.borrow();
        let last = output.index as usize;
        let mut adjoint = vec![0.0; last + 1];
        adjoint[last] = 1.0;
        for i in (0..=last).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let (start, len) = tape.edges[i];
            for e in start as usize..(start + len) as usize {
                adjoint[tape.parents[e] as usize] += a * tape.partials[e];
            }
        }
        Ok(Gradients { graph: self, adjoint })
    }

    /// `∂output/∂wrt_i` for each requested node.
    pub fn backward<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<f64>, DiffError> {
        for v in wrt {
            self.owns(v)?;
        }
        let grads = self.gradients(output)?;
        Ok(wrt.iter().map(|&v| grads.wrt(v)).collect())
    }
}

/// Adjoint vector produced by [`Graph::gradients`].
pub struct Gradients<'g> {
    graph: &'g Graph,
    adjoint: Vec<f64>,
}

impl<'g> Gradients<'g> {
    /// Zero for nodes recorded after the output or not reaching it.
    pub fn wrt(&self, v: Var<'g>) -> f64 {
        debug_assert_eq!(v.graph.id, self.graph.id);
        self.adjoint.get(v.index as usize).copied().unwrap_or(0.0)
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> f64 {
        if self.index == INVALID {
            return f64::NAN;
        }
        self.graph.tape.borrow().values[self.index as usize]
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn is_valid(&self) -> bool {
        self.index != INVALID
    }

    pub(crate) fn unary(self, op: OpKind, value: f64, partial: f64) -> Var<'g> {
        self.graph.apply(op, &[self], value, &[partial])
    }

    pub(crate) fn binary(self, other: Var<'g>, op: OpKind, value: f64, pa: f64, pb: f64) -> Var<'g> {
        self.graph.apply(op, &[self, other], value, &[pa, pb])
    }
}
