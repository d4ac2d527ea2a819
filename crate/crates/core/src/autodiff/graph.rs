//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation whose inputs depend on a trainable
//! leaf. Backward rules are themselves written in terms of [`Var`] operations,
//! so asking for gradients with `create_graph = true` yields gradients that
//! can be differentiated again (needed for gradient penalties).
//!
//! Graphs are single-threaded (`Rc`) and meant to live for one step.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use super::sparse::SparseMap;
use super::tensor::Tensor;

/// Backward rule for operations defined outside this module.
pub trait CustomBackward {
    fn name(&self) -> &str;
    /// Gradients for each parent given the upstream gradient of the output.
    /// Only parents flagged in `needs` have to be filled in.
    fn backward(&self, parents: &[Var], needs: &[bool], output: &Var, grad: &Var) -> Vec<Option<Var>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul { ta: bool, tb: bool },
    Neg,
    Scale(f64),
    AddScalar,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    LeakyRelu(f64),
    Sqrt,
    Square,
    SumTo,
    BroadcastTo,
    Reshape,
    Transpose,
    ConcatCols,
    SliceCols { start: usize },
    PadCols { start: usize },
    ConcatRows,
    SliceRows { start: usize },
    PadRows { start: usize },
    RepeatRows(usize),
    SumRowGroups(usize),
    Sparse { map: Arc<SparseMap>, transpose: bool },
    Cumsum { exclusive: bool, reverse: bool },
    Custom(Rc<dyn CustomBackward>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(c) => write!(f, "Custom({})", c.name()),
            Op::Sparse { transpose, .. } => write!(f, "Sparse(transpose={transpose})"),
            Op::MatMul { ta, tb } => write!(f, "MatMul({ta},{tb})"),
            other => write!(f, "{}", op_name(other)),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "Leaf",
        Op::Add => "Add",
        Op::Sub => "Sub",
        Op::Mul => "Mul",
        Op::Div => "Div",
        Op::MatMul { .. } => "MatMul",
        Op::Neg => "Neg",
        Op::Scale(_) => "Scale",
        Op::AddScalar => "AddScalar",
        Op::Exp => "Exp",
        Op::Ln => "Ln",
        Op::Sin => "Sin",
        Op::Cos => "Cos",
        Op::Tanh => "Tanh",
        Op::Sigmoid => "Sigmoid",
        Op::Softplus => "Softplus",
        Op::Relu => "Relu",
        Op::LeakyRelu(_) => "LeakyRelu",
        Op::Sqrt => "Sqrt",
        Op::Square => "Square",
        Op::SumTo => "SumTo",
        Op::BroadcastTo => "BroadcastTo",
        Op::Reshape => "Reshape",
        Op::Transpose => "Transpose",
        Op::ConcatCols => "ConcatCols",
        Op::SliceCols { .. } => "SliceCols",
        Op::PadCols { .. } => "PadCols",
        Op::ConcatRows => "ConcatRows",
        Op::SliceRows { .. } => "SliceRows",
        Op::PadRows { .. } => "PadRows",
        Op::RepeatRows(_) => "RepeatRows",
        Op::SumRowGroups(_) => "SumRowGroups",
        Op::Sparse { .. } => "Sparse",
        Op::Cumsum { .. } => "Cumsum",
        Op::Custom(_) => "Custom",
    }
}

#[derive(Clone)]
struct Parent {
    id: Option<usize>,
    value: Rc<Tensor>,
}

struct Node {
    op: Op,
    parents: Vec<Parent>,
    value: Rc<Tensor>,
}

struct Inner {
    nodes: Vec<Node>,
    recording: bool,
}

/// An operation tape. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<Inner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Graph(nodes={}, recording={})", inner.nodes.len(), inner.recording)
    }
}

/// A value on a [`Graph`]; `id` is `None` for values that carry no gradient.
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(id={:?}, {:?})", self.id, self.value)
    }
}

impl Graph {
    /// A graph that records operations on trainable leaves.
    pub fn new() -> Self {
        Graph { inner: Rc::new(RefCell::new(Inner { nodes: Vec::new(), recording: true })) }
    }

    /// A graph that never records; every op just computes values.
    pub fn inference() -> Self {
        Graph { inner: Rc::new(RefCell::new(Inner { nodes: Vec::new(), recording: false })) }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// A trainable leaf. On an inference graph this is a constant.
    pub fn leaf(&self, value: Tensor) -> Var {
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        if !inner.recording {
            return Var { graph: self.clone(), id: None, value };
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node { op: Op::Leaf, parents: Vec::new(), value: value.clone() });
        Var { graph: self.clone(), id: Some(id), value }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var { graph: self.clone(), id: None, value: Rc::new(value) }
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn record(&self, op: Op, parents: &[&Var], value: Tensor) -> Var {
        for p in parents {
            debug_assert!(self.same(&p.graph), "mixing values from different graphs");
        }
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        if !inner.recording || parents.iter().all(|p| p.id.is_none()) {
            return Var { graph: self.clone(), id: None, value };
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            parents: parents.iter().map(|p| Parent { id: p.id, value: p.value.clone() }).collect(),
            value: value.clone(),
        });
        Var { graph: self.clone(), id: Some(id), value }
    }

    /// Record a value produced by external code with a custom backward rule.
    pub fn custom(&self, backward: Rc<dyn CustomBackward>, parents: &[&Var], value: Tensor) -> Var {
        self.record(Op::Custom(backward), parents, value)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Inputs that do not influence `output` get a zero gradient. With
    /// `create_graph` the returned gradients are themselves recorded.
    pub fn grad(&self, output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Var> {
        assert_eq!(output.value.shape(), (1, 1), "grad() needs a scalar output");
        let zeros = |w: &Var| self.constant(Tensor::zeros(w.value.rows(), w.value.cols()));
        let Some(out_id) = output.id else {
            return wrt.iter().map(|w| zeros(w)).collect();
        };
        let wanted: HashSet<usize> = wrt.iter().filter_map(|w| w.id).collect();

        // Forward reachability from the requested inputs prunes irrelevant nodes.
        let reach = {
            let inner = self.inner.borrow();
            let mut reach = vec![false; out_id + 1];
            for (id, node) in inner.nodes[..=out_id].iter().enumerate() {
                reach[id] = wanted.contains(&id)
                    || node.parents.iter().any(|p| p.id.is_some_and(|pid| reach[pid]));
            }
            reach
        };

        let previous = std::mem::replace(&mut self.inner.borrow_mut().recording, create_graph);
        let mut grads: Vec<Option<Var>> = vec![None; out_id + 1];
        grads[out_id] = Some(self.constant(Tensor::ones(1, 1)));
        for id in (0..=out_id).rev() {
            if !reach[id] {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            let (op, parents, value) = {
                let inner = self.inner.borrow();
                let n = &inner.nodes[id];
                (n.op.clone(), n.parents.clone(), n.value.clone())
            };
            if matches!(op, Op::Leaf) {
                continue;
            }
            // Parents keep their ids so gradients recorded with `create_graph`
            // stay connected to every input, not just the requested ones.
            let parent_vars: Vec<Var> = parents
                .iter()
                .map(|p| Var { graph: self.clone(), id: p.id, value: p.value.clone() })
                .collect();
            let needs: Vec<bool> = parents.iter().map(|p| p.id.is_some_and(|pid| reach[pid])).collect();
            let out_var = Var { graph: self.clone(), id: Some(id), value };
            let pgrads = backward(&op, &parent_vars, &needs, &out_var, &g);
            debug_assert_eq!(pgrads.len(), parents.len(), "{op:?} returned wrong gradient count");
            for ((p, pg), needed) in parent_vars.iter().zip(pgrads).zip(&needs) {
                if !needed {
                    continue;
                }
                if let (Some(pid), Some(pg)) = (p.id, pg) {
                    debug_assert_eq!(pg.value.shape(), p.value.shape(), "{op:?} gradient shape");
                    grads[pid] = Some(match grads[pid].take() {
                        Some(acc) => acc.add(&pg),
                        None => pg,
                    });
                }
            }
            if !wanted.contains(&id) {
                grads[id] = None;
            }
        }
        self.inner.borrow_mut().recording = previous;
        wrt.iter()
            .map(|w| w.id.and_then(|i| grads.get(i).cloned().flatten()).unwrap_or_else(|| zeros(w)))
            .collect()
    }
}

fn backward(op: &Op, p: &[Var], needs: &[bool], out: &Var, g: &Var) -> Vec<Option<Var>> {
    let need = |i: usize| needs[i];
    let unary = |f: &dyn Fn() -> Var| vec![if need(0) { Some(f()) } else { None }];
    match op {
        Op::Leaf => vec![],
        Op::Add => vec![
            need(0).then(|| g.sum_to(p[0].rows(), p[0].cols())),
            need(1).then(|| g.sum_to(p[1].rows(), p[1].cols())),
        ],
        Op::Sub => vec![
            need(0).then(|| g.sum_to(p[0].rows(), p[0].cols())),
            need(1).then(|| g.neg().sum_to(p[1].rows(), p[1].cols())),
        ],
        Op::Mul => vec![
            need(0).then(|| g.mul(&p[1]).sum_to(p[0].rows(), p[0].cols())),
            need(1).then(|| g.mul(&p[0]).sum_to(p[1].rows(), p[1].cols())),
        ],
        Op::Div => vec![
            need(0).then(|| g.div(&p[1]).sum_to(p[0].rows(), p[0].cols())),
            need(1).then(|| g.mul(&p[0]).div(&p[1].square()).neg().sum_to(p[1].rows(), p[1].cols())),
        ],
        Op::MatMul { ta, tb } => {
            let (a, b) = (&p[0], &p[1]);
            let (ga, gb) = match (ta, tb) {
                (false, false) => (
                    need(0).then(|| g.matmul_ext(b, false, true)),
                    need(1).then(|| a.matmul_ext(g, true, false)),
                ),
                (false, true) => (
                    need(0).then(|| g.matmul_ext(b, false, false)),
                    need(1).then(|| g.matmul_ext(a, true, false)),
                ),
                (true, false) => (
                    need(0).then(|| b.matmul_ext(g, false, true)),
                    need(1).then(|| a.matmul_ext(g, false, false)),
                ),
                (true, true) => (
                    need(0).then(|| b.matmul_ext(g, true, true)),
                    need(1).then(|| g.matmul_ext(a, true, true)),
                ),
            };
            vec![ga, gb]
        }
        Op::Neg => unary(&|| g.neg()),
        Op::Scale(c) => unary(&|| g.scale(*c)),
        Op::AddScalar => unary(&|| g.clone()),
        Op::Exp => unary(&|| g.mul(out)),
        Op::Ln => unary(&|| g.div(&p[0])),
        Op::Sin => unary(&|| g.mul(&p[0].cos())),
        Op::Cos => unary(&|| g.mul(&p[0].sin()).neg()),
        Op::Tanh => unary(&|| g.mul(&out.square().neg().add_scalar(1.0))),
        Op::Sigmoid => unary(&|| g.mul(&out.mul(&out.neg().add_scalar(1.0)))),
        Op::Softplus => unary(&|| g.mul(&p[0].sigmoid())),
        Op::Relu => unary(&|| {
            let mask = p[0].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            g.mul(&g.graph.constant(mask))
        }),
        Op::LeakyRelu(slope) => unary(&|| {
            let mask = p[0].value.map(|v| if v > 0.0 { 1.0 } else { *slope });
            g.mul(&g.graph.constant(mask))
        }),
        Op::Sqrt => unary(&|| g.div(out).scale(0.5)),
        Op::Square => unary(&|| g.mul(&p[0]).scale(2.0)),
        Op::SumTo => unary(&|| g.broadcast_to(p[0].rows(), p[0].cols())),
        Op::BroadcastTo => unary(&|| g.sum_to(p[0].rows(), p[0].cols())),
        Op::Reshape => unary(&|| g.reshape(p[0].rows(), p[0].cols())),
        Op::Transpose => unary(&|| g.transpose()),
        Op::ConcatCols => {
            let mut off = 0;
            p.iter()
                .zip(needs)
                .map(|(pi, &needed)| {
                    let w = pi.cols();
                    let r = needed.then(|| g.slice_cols(off, off + w));
                    off += w;
                    r
                })
                .collect()
        }
        Op::SliceCols { start } => unary(&|| g.pad_cols(*start, p[0].cols())),
        Op::PadCols { start } => unary(&|| g.slice_cols(*start, start + p[0].cols())),
        Op::ConcatRows => {
            let mut off = 0;
            p.iter()
                .zip(needs)
                .map(|(pi, &needed)| {
                    let h = pi.rows();
                    let r = needed.then(|| g.slice_rows(off, off + h));
                    off += h;
                    r
                })
                .collect()
        }
        Op::SliceRows { start } => unary(&|| g.pad_rows(*start, p[0].rows())),
        Op::PadRows { start } => unary(&|| g.slice_rows(*start, start + p[0].rows())),
        Op::RepeatRows(k) => unary(&|| g.sum_row_groups(*k)),
        Op::SumRowGroups(k) => unary(&|| g.repeat_rows(*k)),
        Op::Sparse { map, transpose } => {
            unary(&|| g.sparse(map, !*transpose, p[0].rows(), p[0].cols()))
        }
        Op::Cumsum { exclusive, reverse } => unary(&|| g.cumsum_cols(*exclusive, !*reverse)),
        Op::Custom(c) => c.backward(p, needs, out, g),
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Var {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn to_tensor(&self) -> Tensor {
        (*self.value).clone()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    /// Whether gradients can flow through this value.
    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var {
        Var { graph: self.graph.clone(), id: None, value: self.value.clone() }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value.map(f);
        self.graph.record(op, &[self], v)
    }

    fn binary(&self, other: &Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let v = Tensor::broadcast_binary(&self.value, &other.value, f);
        self.graph.record(op, &[self, other], v)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Var) -> Var {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.matmul_ext(other, false, false)
    }

    /// `op(self) * op(other)` with optional transposes.
    pub fn matmul_ext(&self, other: &Var, ta: bool, tb: bool) -> Var {
        let v = Tensor::matmul(&self.value, &other.value, ta, tb);
        self.graph.record(Op::MatMul { ta, tb }, &[self, other], v)
    }

    pub fn neg(&self) -> Var {
        self.unary(Op::Neg, |v| -v)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(Op::AddScalar, |v| v + c)
    }

    pub fn exp(&self) -> Var {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Var {
        self.unary(Op::Ln, f64::ln)
    }

    pub fn sin(&self) -> Var {
        self.unary(Op::Sin, f64::sin)
    }

    pub fn cos(&self) -> Var {
        self.unary(Op::Cos, f64::cos)
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn softplus(&self) -> Var {
        self.unary(Op::Softplus, softplus)
    }

    pub fn relu(&self) -> Var {
        self.unary(Op::Relu, |v| v.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(slope), move |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sqrt(&self) -> Var {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Var {
        self.unary(Op::Square, |v| v * v)
    }

    pub fn sum_to(&self, rows: usize, cols: usize) -> Var {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        let v = self.value.sum_to(rows, cols);
        self.graph.record(Op::SumTo, &[self], v)
    }

    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Var {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        let v = self.value.broadcast_to(rows, cols);
        self.graph.record(Op::BroadcastTo, &[self], v)
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&self) -> Var {
        self.sum_to(1, 1)
    }

    pub fn mean(&self) -> Var {
        let n = self.value.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums: `[n, c] -> [1, c]`.
    pub fn sum_rows(&self) -> Var {
        self.sum_to(1, self.cols())
    }

    /// Row sums: `[n, c] -> [n, 1]`.
    pub fn sum_cols(&self) -> Var {
        self.sum_to(self.rows(), 1)
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Var {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        let v = self.value.reshape(rows, cols);
        self.graph.record(Op::Reshape, &[self], v)
    }

    pub fn transpose(&self) -> Var {
        let v = self.value.transpose();
        self.graph.record(Op::Transpose, &[self], v)
    }

    pub fn concat_cols(parts: &[&Var]) -> Var {
        assert!(!parts.is_empty());
        let v = Tensor::concat_cols(&parts.iter().map(|p| &*p.value).collect::<Vec<_>>());
        parts[0].graph.record(Op::ConcatCols, parts, v)
    }

    pub fn concat_rows(parts: &[&Var]) -> Var {
        assert!(!parts.is_empty());
        let v = Tensor::concat_rows(&parts.iter().map(|p| &*p.value).collect::<Vec<_>>());
        parts[0].graph.record(Op::ConcatRows, parts, v)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var {
        if start == 0 && end == self.cols() {
            return self.clone();
        }
        let v = self.value.slice_cols(start, end);
        self.graph.record(Op::SliceCols { start }, &[self], v)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Var {
        if start == 0 && end == self.rows() {
            return self.clone();
        }
        let v = self.value.slice_rows(start, end);
        self.graph.record(Op::SliceRows { start }, &[self], v)
    }

    pub fn pad_cols(&self, start: usize, total: usize) -> Var {
        let v = self.value.pad_cols(start, total);
        self.graph.record(Op::PadCols { start }, &[self], v)
    }

    pub fn pad_rows(&self, start: usize, total: usize) -> Var {
        let v = self.value.pad_rows(start, total);
        self.graph.record(Op::PadRows { start }, &[self], v)
    }

    pub fn repeat_rows(&self, k: usize) -> Var {
        if k == 1 {
            return self.clone();
        }
        let v = self.value.repeat_rows(k);
        self.graph.record(Op::RepeatRows(k), &[self], v)
    }

    pub fn sum_row_groups(&self, k: usize) -> Var {
        if k == 1 {
            return self.clone();
        }
        let v = self.value.sum_row_groups(k);
        self.graph.record(Op::SumRowGroups(k), &[self], v)
    }

    /// Apply a fixed sparse linear map to the flattened value.
    pub fn sparse(&self, map: &Arc<SparseMap>, transpose: bool, rows: usize, cols: usize) -> Var {
        let v = map.apply(&self.value, transpose, rows, cols);
        self.graph.record(Op::Sparse { map: map.clone(), transpose }, &[self], v)
    }

    pub fn cumsum_cols(&self, exclusive: bool, reverse: bool) -> Var {
        let v = self.value.cumsum_cols(exclusive, reverse);
        self.graph.record(Op::Cumsum { exclusive, reverse }, &[self], v)
    }

    /// Divide each row by its L2 norm (plus `eps` under the root).
    pub fn normalize_rows(&self, eps: f64) -> Var {
        let norm = self.square().sum_cols().add_scalar(eps).sqrt();
        self.div(&norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&Graph, &Var) -> Var, x0: Tensor) {
        let g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = f(&g, &x);
        let analytic = g.grad(&y, &[&x], false).remove(0).to_tensor();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += h;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= h;
            let gi = Graph::inference();
            let fp = f(&gi, &gi.constant(plus)).item();
            let fm = f(&gi, &gi.constant(minus)).item();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            assert!((a - numeric).abs() / denom < 1e-5, "entry {i}: analytic {a} vs numeric {numeric}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin() * 0.9 + 0.05)
    }

    #[test]
    fn elementwise_gradients() {
        fd_check(|_, x| x.exp().mul(&x.sin()).add(&x.cos().tanh()).sum(), sample(3, 4));
        fd_check(|_, x| x.sigmoid().mul(&x.softplus()).sum(), sample(2, 5));
        fd_check(|_, x| x.square().add_scalar(1.0).sqrt().ln().sum(), sample(4, 2));
        fd_check(|_, x| x.leaky_relu(0.2).mul(x).sum(), sample(3, 3));
        fd_check(|_, x| x.relu().scale(3.0).neg().div(&x.square().add_scalar(2.0)).sum(), sample(3, 3));
    }

    #[test]
    fn broadcasting_and_matmul_gradients() {
        let w = sample(4, 3);
        let b = Tensor::row(&[0.1, -0.2, 0.3]);
        fd_check(
            move |g, x| {
                let w = g.constant(w.clone());
                let b = g.constant(b.clone());
                x.matmul(&w).add(&b).tanh().sum()
            },
            sample(5, 4),
        );
        let a = sample(3, 5);
        fd_check(move |g, x| g.constant(a.clone()).matmul_ext(x, true, true).square().sum(), sample(2, 3));
        fd_check(|_, x| x.matmul_ext(x, true, false).sum(), sample(3, 2));
        fd_check(|_, x| x.mul(&x.sum_cols()).div(&x.sum_rows().add_scalar(3.0)).sum(), sample(3, 4));
    }

    #[test]
    fn shape_op_gradients() {
        fd_check(
            |_, x| {
                let a = x.slice_cols(0, 2);
                let b = x.slice_cols(2, 4).exp();
                let c = Var::concat_cols(&[&b, &a]).repeat_rows(3).sin();
                let d = Var::concat_rows(&[&c, &x.slice_rows(0, 1)]);
                d.reshape(1, d.value().len()).square().sum().add(&c.sum_row_groups(3).cumsum_cols(true, false).cos().sum())
            },
            sample(2, 4),
        );
        let map = Arc::new(SparseMap::from_rows(6, vec![vec![(0, 0.5), (5, 1.5)], vec![(3, -1.0)], vec![(2, 2.0), (2, 1.0)]]));
        fd_check(move |_, x| x.sparse(&map, false, 1, 3).square().sum().add(&x.cumsum_cols(false, true).exp().sum()), sample(2, 3));
        fd_check(|_, x| x.transpose().normalize_rows(1e-9).slice_cols(0, 1).pad_cols(1, 3).pad_rows(0, 3).sin().sum(), sample(2, 3));
    }

    #[test]
    fn second_order_matches_analytic() {
        // f(x) = sum(x^3); grad = 3x^2; d/dx sum(grad^2) = 36 x^3
        let g = Graph::new();
        let x0 = sample(2, 3);
        let x = g.leaf(x0.clone());
        let y = x.square().mul(&x).sum();
        let gx = g.grad(&y, &[&x], true).remove(0);
        let penalty = gx.square().sum();
        let ggx = g.grad(&penalty, &[&x], false).remove(0);
        for (i, v) in x0.data().iter().enumerate() {
            assert!((ggx.value().data()[i] - 36.0 * v.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_penalty_differentiates_wrt_weights() {
        // penalty(W) = || d/dx sum(tanh(x W)) ||^2, checked against finite differences in W
        let x0 = sample(3, 4);
        let penalty = |g: &Graph, w: &Var, create: bool| {
            let x = g.leaf(x0.clone());
            let d = x.matmul(w).tanh().sum();
            let gx = g.grad(&d, &[&x], create).remove(0);
            gx.square().sum()
        };
        let w0 = sample(4, 2);
        let g = Graph::new();
        let w = g.leaf(w0.clone());
        let p = penalty(&g, &w, true);
        let analytic = g.grad(&p, &[&w], false).remove(0).to_tensor();
        let h = 1e-6;
        for i in 0..w0.len() {
            let eval = |delta: f64| {
                let mut t = w0.clone();
                t.data_mut()[i] += delta;
                let g = Graph::new();
                let w = g.constant(t);
                penalty(&g, &w, false).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((a - numeric).abs() <= 1e-5 * a.abs().max(numeric.abs()).max(1e-6), "{i}: {a} vs {numeric}");
        }
    }

    #[test]
    fn inference_graph_records_nothing() {
        let g = Graph::inference();
        let x = g.leaf(sample(2, 2));
        let y = x.exp().sum();
        assert!(!y.requires_grad());
        assert_eq!(g.node_count(), 0);
    }

    #[test]
    fn unrelated_inputs_get_zero_gradient() {
        let g = Graph::new();
        let x = g.leaf(sample(2, 2));
        let z = g.leaf(sample(1, 3));
        let y = x.sum();
        let grads = g.grad(&y, &[&x, &z], false);
        assert_eq!(grads[0].value().data(), &[1.0; 4]);
        assert_eq!(grads[1].value().data(), &[0.0; 3]);
    }
}
