//! Reverse-mode automatic differentiation over an append-only graph of
//! matrix-valued nodes.
//!
//! The backward pass does not run on a side tape. Every adjoint it computes
//! is itself a node appended to the same graph, so the result of [`Graph::grad`]
//! can be differentiated again. This is what makes `u_xx` (two passes with
//! respect to the network input) and `∂L/∂θ` of a loss containing `u_xx`
//! (a third pass with respect to the weights) available from one mechanism.
//!
//! Values are dense `f64` matrices with rows indexing the batch and columns
//! indexing features. Non-finite results are rejected when a node is built.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis as NdAxis, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Reduction extent for [`Op::ReduceSum`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    /// Sum of every entry, giving a 1×1 node.
    All,
    /// Sum over batch rows, giving a 1×C node.
    Rows,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Constant,
    Variable,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    PowI(NodeId, i32),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    /// `grad · (1 − out²)` for `out = tanh(·)`: the tanh adjoint in one node.
    TanhGrad {
        out: NodeId,
        grad: NodeId,
    },
    Square(NodeId),
    /// `op(lhs) · op(rhs)` where `op` optionally transposes.
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
        transpose_lhs: bool,
        transpose_rhs: bool,
    },
    /// R×C input plus a 1×C row added to every row.
    AddBias {
        input: NodeId,
        bias: NodeId,
    },
    ReduceSum(NodeId, Reduce),
    /// Replicates a 1×1 or 1×C node to `rows × cols`.
    Broadcast {
        input: NodeId,
        rows: usize,
        cols: usize,
    },
    /// Multiplication by a fixed scalar.
    Scale(NodeId, f64),
    /// Addition of a fixed scalar.
    Offset(NodeId, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Variable => "variable",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::PowI(..) => "powi",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Exp(_) => "exp",
            Op::Tanh(_) => "tanh",
            Op::TanhGrad { .. } => "tanh_grad",
            Op::Square(_) => "square",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::ReduceSum(..) => "reduce_sum",
            Op::Broadcast { .. } => "broadcast",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
        }
    }

    pub fn parents(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Constant | Op::Variable => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => [Some(a), Some(b)],
            Op::MatMul { lhs, rhs, .. } => [Some(lhs), Some(rhs)],
            Op::AddBias { input, bias } => [Some(input), Some(bias)],
            Op::TanhGrad { out, grad } => [Some(out), Some(grad)],
            Op::Neg(a)
            | Op::PowI(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::ReduceSum(a, _)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Broadcast { input: a, .. } => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    id: NodeId,
    op: Op,
    value: Array2<f64>,
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: shape(a),
            right: shape(b),
        })
    }
}

fn oriented(a: &Array2<f64>, transpose: bool) -> ArrayView2<'_, f64> {
    if transpose {
        a.t()
    } else {
        a.view()
    }
}

/// Computes the value of `op` from already-evaluated parents.
fn eval_op<'a>(op: &Op, get: impl Fn(NodeId) -> &'a Array2<f64>) -> Result<Array2<f64>> {
    let name = op.name();
    let binary = |a: NodeId, b: NodeId, f: fn(f64, f64) -> f64| -> Result<Array2<f64>> {
        let (x, y) = (get(a), get(b));
        same_shape(name, x, y)?;
        Ok(Zip::from(x).and(y).map_collect(|&p, &q| f(p, q)))
    };
    let value = match *op {
        Op::Constant | Op::Variable => unreachable!("leaves carry their own values"),
        Op::Add(a, b) => binary(a, b, |p, q| p + q)?,
        Op::Sub(a, b) => binary(a, b, |p, q| p - q)?,
        Op::Mul(a, b) => binary(a, b, |p, q| p * q)?,
        Op::Div(a, b) => binary(a, b, |p, q| p / q)?,
        Op::Neg(a) => get(a).mapv(|v| -v),
        Op::PowI(a, k) => get(a).mapv(|v| v.powi(k)),
        Op::Sin(a) => get(a).mapv(f64::sin),
        Op::Cos(a) => get(a).mapv(f64::cos),
        Op::Exp(a) => get(a).mapv(f64::exp),
        Op::Tanh(a) => get(a).mapv(f64::tanh),
        Op::TanhGrad { out, grad } => binary(out, grad, |y, g| g * (1.0 - y * y))?,
        Op::Square(a) => get(a).mapv(|v| v * v),
        Op::Scale(a, c) => get(a).mapv(|v| c * v),
        Op::Offset(a, c) => get(a).mapv(|v| v + c),
        Op::MatMul {
            lhs,
            rhs,
            transpose_lhs,
            transpose_rhs,
        } => {
            let x = oriented(get(lhs), transpose_lhs);
            let y = oriented(get(rhs), transpose_rhs);
            if x.ncols() != y.nrows() {
                return Err(Error::Shape {
                    op: name,
                    left: x.dim(),
                    right: y.dim(),
                });
            }
            x.dot(&y)
        }
        Op::AddBias { input, bias } => {
            let (x, b) = (get(input), get(bias));
            if b.nrows() != 1 || b.ncols() != x.ncols() {
                return Err(Error::Shape {
                    op: name,
                    left: x.dim(),
                    right: b.dim(),
                });
            }
            x + b
        }
        Op::ReduceSum(a, Reduce::All) => Array2::from_elem((1, 1), get(a).sum()),
        Op::ReduceSum(a, Reduce::Rows) => get(a).sum_axis(NdAxis(0)).insert_axis(NdAxis(0)),
        Op::Broadcast { input, rows, cols } => {
            let x = get(input);
            let ok = x.nrows() == 1 && (x.ncols() == 1 || x.ncols() == cols);
            if !ok {
                return Err(Error::Shape {
                    op: name,
                    left: x.dim(),
                    right: (rows, cols),
                });
            }
            x.broadcast((rows, cols))
                .expect("broadcast shape checked above")
                .to_owned()
        }
    };
    Ok(value)
}

/// Append-only computation graph. Confined to one thread of execution.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    variables: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    /// Value of a node produced by this graph.
    ///
    /// Panics if `id` does not belong to the graph; use [`Graph::node`] for a
    /// checked lookup.
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// The single entry of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = &self.node(id)?.value;
        if v.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "scalar",
                left: v.dim(),
                right: (1, 1),
            });
        }
        Ok(v[[0, 0]])
    }

    pub fn is_variable(&self, id: NodeId) -> bool {
        self.variables.get(id.0).copied().unwrap_or(false)
    }

    fn push_leaf(&mut self, op: Op, value: Array2<f64>) -> Result<NodeId> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(op.name()));
        }
        let id = NodeId(self.nodes.len());
        self.variables.push(matches!(op, Op::Variable));
        self.nodes.push(Node { id, op, value });
        Ok(id)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        for p in op.parents().into_iter().flatten() {
            if p.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(p.0));
            }
        }
        let value = eval_op(&op, |id| &self.nodes[id.0].value)?;
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(op.name()));
        }
        let id = NodeId(self.nodes.len());
        self.variables.push(false);
        self.nodes.push(Node { id, op, value });
        Ok(id)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<NodeId> {
        self.push_leaf(Op::Constant, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<NodeId> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Registers a differentiable leaf.
    pub fn variable(&mut self, value: Array2<f64>) -> Result<NodeId> {
        self.push_leaf(Op::Variable, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg(a))
    }

    pub fn powi(&mut self, a: NodeId, k: i32) -> Result<NodeId> {
        self.push(Op::PowI(a, k))
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Cos(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Offset(a, c))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.matmul_t(lhs, rhs, false, false)
    }

    pub fn matmul_t(
        &mut self,
        lhs: NodeId,
        rhs: NodeId,
        transpose_lhs: bool,
        transpose_rhs: bool,
    ) -> Result<NodeId> {
        self.push(Op::MatMul {
            lhs,
            rhs,
            transpose_lhs,
            transpose_rhs,
        })
    }

    /// `grad · (1 − out²)`, the derivative of tanh expressed through its output.
    pub fn tanh_grad(&mut self, out: NodeId, grad: NodeId) -> Result<NodeId> {
        self.push(Op::TanhGrad { out, grad })
    }

    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias { input, bias })
    }

    pub fn reduce_sum(&mut self, a: NodeId, extent: Reduce) -> Result<NodeId> {
        self.push(Op::ReduceSum(a, extent))
    }

    pub fn broadcast(&mut self, input: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.push(Op::Broadcast { input, rows, cols })
    }

    /// Sum of `terms`, left to right.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("sum of an empty term list"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Recomputes every derived node from the leaves and checks the stored
    /// values are reproduced bit for bit.
    pub fn reevaluate(&self) -> Result<bool> {
        let mut fresh: Vec<Array2<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Variable => node.value.clone(),
                ref op => eval_op(op, |id| &fresh[id.0])?,
            };
            fresh.push(v);
        }
        Ok(self.nodes.iter().zip(&fresh).all(|(n, v)| {
            n.value.dim() == v.dim()
                && n.value
                    .iter()
                    .zip(v.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    /// Appends nodes holding `∂output/∂w` for every `w` in `wrt`.
    ///
    /// A non-scalar `output` is seeded with ones, i.e. the gradient of the sum
    /// of its entries is taken. For a batch column whose rows depend only on
    /// the matching rows of the variables, row `i` of the result is then the
    /// per-sample derivative at sample `i`.
    ///
    /// Variables that `output` does not depend on get a zero constant of their
    /// own shape.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.node(output)?;
        for &w in wrt {
            self.node(w)?;
            if !self.is_variable(w) {
                return Err(Error::NotAVariable(w.0));
            }
        }

        // Nodes on a path from some wrt variable; everything else has no
        // adjoint contribution worth building.
        let end = output.0 + 1;
        let mut depends = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                depends[w.0] = true;
            }
        }
        for i in 0..end {
            if depends[i] {
                continue;
            }
            depends[i] = self.nodes[i]
                .op
                .parents()
                .into_iter()
                .flatten()
                .any(|p| depends[p.0]);
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; end];
        let mut seed = None;
        if depends[output.0] {
            let ones = self.constant(Array2::ones(self.nodes[output.0].value.dim()))?;
            adjoint[output.0] = Some(ones);
            seed = Some(ones);
        }

        for i in (0..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !depends[i] {
                continue;
            }
            let node_id = NodeId(i);
            let op = self.nodes[i].op.clone();
            let mut contributions: Vec<(NodeId, NodeId)> = Vec::with_capacity(2);
            let wants = |p: NodeId| depends[p.0];
            match op {
                Op::Constant | Op::Variable => {}
                Op::Add(a, b) => {
                    if wants(a) {
                        contributions.push((a, g));
                    }
                    if wants(b) {
                        contributions.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        contributions.push((a, g));
                    }
                    if wants(b) {
                        contributions.push((b, self.neg(g)?));
                    }
                }
                Op::Mul(a, b) => {
                    // a ones seed multiplies through unchanged
                    let unit = Some(g) == seed;
                    if wants(a) {
                        contributions.push((a, if unit { b } else { self.mul(g, b)? }));
                    }
                    if wants(b) {
                        contributions.push((b, if unit { a } else { self.mul(g, a)? }));
                    }
                }
                Op::Div(a, b) => {
                    if wants(a) {
                        contributions.push((a, self.div(g, b)?));
                    }
                    if wants(b) {
                        let t = self.mul(g, node_id)?;
                        let t = self.div(t, b)?;
                        contributions.push((b, self.neg(t)?));
                    }
                }
                Op::Neg(a) => contributions.push((a, self.neg(g)?)),
                Op::PowI(a, k) => match k {
                    0 => {}
                    1 => contributions.push((a, g)),
                    _ => {
                        let d = self.powi(a, k - 1)?;
                        let d = self.scale(d, f64::from(k))?;
                        contributions.push((a, self.mul(g, d)?));
                    }
                },
                Op::Sin(a) => {
                    let d = self.cos(a)?;
                    contributions.push((a, self.mul(g, d)?));
                }
                Op::Cos(a) => {
                    let d = self.sin(a)?;
                    let t = self.mul(g, d)?;
                    contributions.push((a, self.neg(t)?));
                }
                Op::Exp(a) => contributions.push((a, self.mul(g, node_id)?)),
                Op::Tanh(a) => contributions.push((a, self.tanh_grad(node_id, g)?)),
                Op::TanhGrad { out, grad } => {
                    if wants(grad) {
                        contributions.push((grad, self.tanh_grad(out, g)?));
                    }
                    if wants(out) {
                        // ∂/∂y of grad·(1 − y²) is −2·y·grad
                        let t = self.mul(g, grad)?;
                        let t = self.mul(t, out)?;
                        contributions.push((out, self.scale(t, -2.0)?));
                    }
                }
                Op::Square(a) => {
                    let d = self.scale(a, 2.0)?;
                    contributions.push((a, self.mul(g, d)?));
                }
                Op::Scale(a, c) => contributions.push((a, self.scale(g, c)?)),
                Op::Offset(a, _) => contributions.push((a, g)),
                Op::MatMul {
                    lhs,
                    rhs,
                    transpose_lhs,
                    transpose_rhs,
                } => {
                    if wants(lhs) {
                        let d = if transpose_lhs {
                            self.matmul_t(rhs, g, transpose_rhs, true)?
                        } else {
                            self.matmul_t(g, rhs, false, !transpose_rhs)?
                        };
                        contributions.push((lhs, d));
                    }
                    if wants(rhs) {
                        let d = if transpose_rhs {
                            self.matmul_t(g, lhs, true, transpose_lhs)?
                        } else {
                            self.matmul_t(lhs, g, !transpose_lhs, false)?
                        };
                        contributions.push((rhs, d));
                    }
                }
                Op::AddBias { input, bias } => {
                    if wants(input) {
                        contributions.push((input, g));
                    }
                    if wants(bias) {
                        contributions.push((bias, self.reduce_sum(g, Reduce::Rows)?));
                    }
                }
                Op::ReduceSum(a, _) => {
                    let (rows, cols) = self.nodes[a.0].value.dim();
                    contributions.push((a, self.broadcast(g, rows, cols)?));
                }
                Op::Broadcast { input, .. } => {
                    let extent = if self.nodes[input.0].value.ncols() == 1 {
                        Reduce::All
                    } else {
                        Reduce::Rows
                    };
                    contributions.push((input, self.reduce_sum(g, extent)?));
                }
            }

            for (parent, c) in contributions {
                let expected = self.nodes[parent.0].value.dim();
                let got = self.nodes[c.0].value.dim();
                if expected != got {
                    return Err(Error::Shape {
                        op: "adjoint accumulation",
                        left: expected,
                        right: got,
                    });
                }
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Array2::zeros(self.nodes[w.0].value.dim());
                    self.constant(zeros)
                }
            })
            .collect()
    }
}

/// Relative discrepancy between an AD derivative and a central finite
/// difference of a scalar function of one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdCheck {
    pub ad: f64,
    pub fd: f64,
    pub relative_error: f64,
}

/// Compares the AD derivative of order 1 or 2 of `f` at `x` against the
/// central stencils `(f(x+h)-f(x-h))/2h` and `(f(x+h)-2f(x)+f(x-h))/h²`.
///
/// `f` builds its output from the supplied 1×1 variable. The relative error
/// is `|ad - fd| / max(|ad|, floor)` with a floor of 1e-12.
pub fn finite_difference_check<F>(f: F, x: f64, order: u8, h: f64) -> Result<FdCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    const FLOOR: f64 = 1e-12;
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if order != 1 && order != 2 {
        return Err(Error::invalid(format!(
            "derivative order must be 1 or 2, got {order}"
        )));
    }
    let eval = |at: f64| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.variable(Array2::from_elem((1, 1), at))?;
        let y = f(&mut g, v)?;
        g.scalar(y)
    };

    let mut g = Graph::new();
    let v = g.variable(Array2::from_elem((1, 1), x))?;
    let y = f(&mut g, v)?;
    let mut d = g.grad(y, &[v])?[0];
    if order == 2 {
        d = g.grad(d, &[v])?[0];
    }
    let ad = g.scalar(d)?;

    let (plus, minus) = (eval(x + h)?, eval(x - h)?);
    let fd = if order == 1 {
        (plus - minus) / (2.0 * h)
    } else {
        (plus - 2.0 * eval(x)? + minus) / (h * h)
    };
    if !fd.is_finite() {
        return Err(Error::NonFinite("finite difference"));
    }
    Ok(FdCheck {
        ad,
        fd,
        relative_error: (ad - fd).abs() / ad.abs().max(FLOOR),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::PI;

    fn scalar_var(g: &mut Graph, x: f64) -> NodeId {
        g.variable(array![[x]]).unwrap()
    }

    #[test]
    fn square_first_and_second_derivative() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 3.0);
        let y = g.mul(x, x).unwrap();
        let dy = g.grad(y, &[x]).unwrap()[0];
        assert_eq!(g.scalar(dy).unwrap(), 6.0);
        let d2y = g.grad(dy, &[x]).unwrap()[0];
        assert_eq!(g.scalar(d2y).unwrap(), 2.0);
    }

    #[test]
    fn sin_pi_x_second_derivative() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 0.5);
        let px = g.scale(x, PI).unwrap();
        let y = g.sin(px).unwrap();
        let d1 = g.grad(y, &[x]).unwrap()[0];
        let d2 = g.grad(d1, &[x]).unwrap()[0];
        assert!((g.scalar(d2).unwrap() + PI * PI).abs() < 1e-12);
        assert!((g.scalar(d2).unwrap() - (-9.8696044)).abs() < 1e-7);
    }

    #[test]
    fn grad_rejects_non_variables_and_unknown_ids() {
        let mut g = Graph::new();
        let c = g.scalar_constant(2.0).unwrap();
        let y = g.square(c).unwrap();
        assert!(matches!(g.grad(y, &[c]), Err(Error::NotAVariable(_))));
        assert!(matches!(
            g.grad(NodeId(99), &[]),
            Err(Error::UnknownNode(99))
        ));
        let x = scalar_var(&mut g, 1.0);
        assert!(matches!(
            g.grad(y, &[NodeId(1234)]),
            Err(Error::UnknownNode(1234))
        ));
        // unrelated variable gets a zero gradient
        let dx = g.grad(y, &[x]).unwrap()[0];
        assert_eq!(g.scalar(dx).unwrap(), 0.0);
    }

    #[test]
    fn construction_rejects_shape_mismatch_and_non_finite() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3))).unwrap();
        let b = g.constant(Array2::zeros((3, 2))).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        assert!(g.matmul(a, b).is_ok());
        assert!(matches!(g.matmul(a, a), Err(Error::Shape { .. })));
        assert!(g.matmul_t(a, a, false, true).is_ok());
        let z = g.scalar_constant(0.0).unwrap();
        let one = g.scalar_constant(1.0).unwrap();
        assert!(matches!(g.div(one, z), Err(Error::NonFinite("div"))));
        assert!(matches!(
            g.constant(array![[f64::NAN]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn matmul_transposed_gradients_match_plain_form() {
        let a0 = array![[1.0, 2.0, -1.0], [0.5, -0.3, 2.0]];
        let b0 = array![[0.7, -1.2], [0.1, 0.4], [2.0, 1.0]];
        let mut g = Graph::new();
        let a = g.variable(a0.clone()).unwrap();
        let b = g.variable(b0.clone()).unwrap();
        let c = g.matmul(a, b).unwrap();
        let s = g.square(c).unwrap();
        let grads = g.grad(s, &[a, b]).unwrap();

        let mut h = Graph::new();
        let at = h.variable(a0.t().to_owned()).unwrap();
        let bt = h.variable(b0.t().to_owned()).unwrap();
        let c2 = h.matmul_t(at, bt, true, true).unwrap();
        let s2 = h.square(c2).unwrap();
        let grads_t = h.grad(s2, &[at, bt]).unwrap();

        assert_eq!(g.value(c), h.value(c2));
        for (x, y) in grads.iter().zip(&grads_t) {
            let diff = g.value(*x) - &h.value(*y).t();
            assert!(diff.iter().all(|d| d.abs() < 1e-14));
        }
    }

    #[test]
    fn batch_sum_gives_per_row_derivatives() {
        let xs = array![[-1.0], [0.0], [0.25], [2.0]];
        let mut g = Graph::new();
        let x = g.variable(xs.clone()).unwrap();
        let y = g.tanh(x).unwrap();
        let dy = g.grad(y, &[x]).unwrap()[0];
        for (row, &xi) in xs.column(0).iter().enumerate() {
            let expected = 1.0 - xi.tanh().powi(2);
            assert!((g.value(dy)[[row, 0]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_and_broadcast_adjoints() {
        let mut g = Graph::new();
        let x = g.variable(Array2::from_elem((3, 2), 1.0)).unwrap();
        let b = g.variable(array![[0.5, -0.5]]).unwrap();
        let s = g.variable(array![[2.0]]).unwrap();
        let y = g.add_bias(x, b).unwrap();
        let sb = g.broadcast(s, 3, 2).unwrap();
        let y = g.mul(y, sb).unwrap();
        let total = g.reduce_sum(y, Reduce::All).unwrap();
        let grads = g.grad(total, &[x, b, s]).unwrap();
        assert!(g.value(grads[0]).iter().all(|&v| v == 2.0));
        assert_eq!(g.value(grads[1]), &array![[6.0, 6.0]]);
        // d/ds Σ (x + b) s = Σ (x + b) = 3·1.5 + 3·0.5
        assert_eq!(g.scalar(grads[2]).unwrap(), 6.0);
    }

    #[test]
    fn grad_appends_without_touching_existing_nodes() {
        let mut g = Graph::new();
        let x = g.variable(array![[0.3, -0.7]]).unwrap();
        let y = g.tanh(x).unwrap();
        let y = g.mul(y, x).unwrap();
        let before: Vec<_> = g.nodes().iter().map(|n| n.value().clone()).collect();
        let n = g.len();
        let d = g.grad(y, &[x]).unwrap()[0];
        g.grad(d, &[x]).unwrap();
        assert!(g.len() > n);
        for (node, old) in g.nodes()[..n].iter().zip(&before) {
            assert!(node
                .value()
                .iter()
                .zip(old.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(g.reevaluate().unwrap());
    }

    #[test]
    fn finite_difference_examples() {
        let tanh = |g: &mut Graph, x: NodeId| g.tanh(x);
        let r = finite_difference_check(tanh, 0.3, 1, 1e-5).unwrap();
        assert!(r.relative_error < 1e-8, "{r:?}");

        let exp = |g: &mut Graph, x: NodeId| g.exp(x);
        let r = finite_difference_check(exp, 0.0, 2, 1e-4).unwrap();
        assert_eq!(r.ad, 1.0);
        assert!(r.relative_error < 1e-6, "{r:?}");

        let constant = |g: &mut Graph, _x: NodeId| g.scalar_constant(4.2);
        let r = finite_difference_check(constant, 1.7, 1, 1e-3).unwrap();
        assert_eq!(r.ad, 0.0);

        assert!(finite_difference_check(tanh, 0.0, 1, 0.0).is_err());
        assert!(finite_difference_check(tanh, 0.0, 3, 1e-3).is_err());
    }
}
