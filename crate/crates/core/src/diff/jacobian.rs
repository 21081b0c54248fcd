use nalgebra::DMatrix;

use super::graph::{Graph, Var};
use super::scalar::{Dual, VectorFn};
use super::DiffError;

/// Jacobian whose entries are live graph nodes.
///
/// Row `n` holds the partials of output `n`; with a slot layout of `K` slots of
/// dimension `M`, columns `[kM, (k+1)M)` are the block for slot `k`.
#[derive(Debug, Clone)]
pub struct JacobianMatrix<'g> {
    rows: usize,
    cols: usize,
    entries: Vec<Var<'g>>,
    outputs: Vec<Var<'g>>,
}

impl<'g> JacobianMatrix<'g> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> Var<'g> {
        self.entries[row * self.cols + col]
    }

    /// Entries of row `n`, restricted to columns `cols`.
    pub fn row_block(&self, row: usize, cols: std::ops::Range<usize>) -> &[Var<'g>] {
        let start = row * self.cols;
        &self.entries[start + cols.start..start + cols.end]
    }

    /// Primal outputs of the function at the evaluation point.
    pub fn outputs(&self) -> &[Var<'g>] {
        &self.outputs
    }

    pub fn values(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c).value())
    }
}

/// Jacobian of `f` at `input`, re-recording `f` once per input coordinate with
/// that coordinate's tangent seeded to one.
pub fn jacobian<'g, F>(graph: &'g Graph, f: F, input: &[Var<'g>]) -> Result<JacobianMatrix<'g>, DiffError>
where
    F: Fn(&[Dual<'g>]) -> Vec<Dual<'g>>,
{
    let cols = input.len();
    let zero = graph.constant(0.0)?;
    let one = graph.constant(1.0)?;
    let mut columns: Vec<Vec<Var<'g>>> = Vec::with_capacity(cols);
    let mut outputs = Vec::new();
    for i in 0..cols {
        let seeded: Vec<Dual<'g>> = input
            .iter()
            .enumerate()
            .map(|(j, &v)| if i == j { Dual::seeded(v, one) } else { Dual::constant(v) })
            .collect();
        let out = f(&seeded);
        graph.check()?;
        if i == 0 {
            outputs = out.iter().map(|d| d.primal).collect();
        }
        columns.push(out.iter().map(|d| d.tangent.unwrap_or(zero)).collect());
    }
    if cols == 0 {
        let out = f(&[]);
        graph.check()?;
        outputs = out.iter().map(|d| d.primal).collect();
    }
    let rows = outputs.len();
    let mut entries = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for column in &columns {
            entries.push(column[r]);
        }
    }
    Ok(JacobianMatrix { rows, cols, entries, outputs })
}

pub fn jacobian_of<'g, F: VectorFn>(graph: &'g Graph, map: &F, input: &[Var<'g>]) -> Result<JacobianMatrix<'g>, DiffError> {
    jacobian(graph, |z| map.apply(z), input)
}

/// Plain-valued Jacobian of `map` at `z`, computed on a scratch graph.
pub fn jacobian_values<F: VectorFn>(map: &F, z: &[f64]) -> Result<DMatrix<f64>, DiffError> {
    let graph = Graph::new();
    let input = graph.variables(z)?;
    Ok(jacobian_of(&graph, map, &input)?.values())
}
