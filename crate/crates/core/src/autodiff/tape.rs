use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use super::AutodiffError;

/// Slope of the negative half of `leaky_relu`.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Backward rule of a custom node: maps the output cotangent to one cotangent per parent.
pub type BackwardRule = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Erf(usize),
    Sigmoid(usize),
    LeakyRelu(usize),
    Tanh(usize),
    Softplus(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    SumAxis(usize, usize),
    Max(usize),
    LogSumExp(usize),
    LogSumExpAxis(usize, usize),
    Take(usize, Vec<usize>),
    RepeatRows(usize),
    RepeatCols(usize),
    Reshape(usize),
    SliceCols(usize, usize),
    Concat(Vec<usize>),
    DiagEmbed(usize),
    SolveLowerRows(usize, usize),
    Custom(Vec<usize>, BackwardRule),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | SolveLowerRows(a, b) => {
                vec![*a, *b]
            }
            Neg(a)
            | Exp(a)
            | Ln(a)
            | Sqrt(a)
            | Erf(a)
            | Sigmoid(a)
            | LeakyRelu(a)
            | Tanh(a)
            | Softplus(a)
            | Transpose(a)
            | Sum(a)
            | SumAxis(a, _)
            | Max(a)
            | LogSumExp(a)
            | LogSumExpAxis(a, _)
            | Take(a, _)
            | RepeatRows(a)
            | RepeatCols(a)
            | Reshape(a)
            | SliceCols(a, _)
            | DiagEmbed(a) => vec![*a],
            Concat(ps) | Custom(ps, _) => ps.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a define-by-run computation.
///
/// Node ids increase in creation order and every op only refers to earlier
/// nodes, so the graph is acyclic and a reverse sweep over ids is a valid
/// reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_op(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Records a node whose backward pass is supplied by the caller.
    ///
    /// `rule` receives the output cotangent and must return exactly one
    /// cotangent per parent, shaped like that parent.
    pub fn custom_vjp<'t>(&'t self, value: Tensor, parents: &[Var<'t>], rule: BackwardRule) -> Var<'t> {
        let ids = parents.iter().map(|p| p.id).collect();
        self.push_op(value, Op::Custom(ids, rule))
    }

    /// Stacks vectors (as rows) and matrices along the row axis.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = parts[0].value().cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push_op(
            Tensor::matrix(rows, cols, data),
            Op::Concat(parts.iter().map(|p| p.id).collect()),
        )
    }

    /// Reverse-mode gradient of a scalar `loss` with respect to each of `wrt`.
    pub fn grad(&self, loss: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(loss.id + 1);
        adj.resize_with(loss.id + 1, || None);
        adj[loss.id] = Some(Tensor::new(lv.shape(), vec![1.0]));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = adj.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            backward(&nodes, node, g, lower);
        }
        Ok(wrt
            .iter()
            .map(|w| {
                adj.get(w.id)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| Tensor::zeros(nodes[w.id].value.shape()))
            })
            .collect())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut adj[id] {
        Some(a) => a.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Reduces a broadcast cotangent back onto a scalar operand.
fn unbroadcast(g: &Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g.clone()
    } else {
        Tensor::new(target.shape(), vec![g.sum()])
    }
}

fn backward(nodes: &[Node], node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let needs = |id: usize| nodes[id].requires_grad;
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(adj, *a, unbroadcast(g, val(*a)));
            }
            if needs(*b) {
                accumulate(adj, *b, unbroadcast(g, val(*b)));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(adj, *a, unbroadcast(g, val(*a)));
            }
            if needs(*b) {
                accumulate(adj, *b, unbroadcast(&g.scale(-1.0), val(*b)));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let ga = broadcast_zip(g, bv, |g, b| g * b);
                accumulate(adj, *a, unbroadcast(&ga, av));
            }
            if needs(*b) {
                let gb = broadcast_zip(g, av, |g, a| g * a);
                accumulate(adj, *b, unbroadcast(&gb, bv));
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let ga = broadcast_zip(g, bv, |g, b| g / b);
                accumulate(adj, *a, unbroadcast(&ga, av));
            }
            if needs(*b) {
                // d(a/b)/db = -out / b
                let ob = broadcast_zip(out, bv, |o, b| -o / b);
                let gb = g.zip_map(&ob, |g, v| g * v);
                accumulate(adj, *b, unbroadcast(&gb, bv));
            }
        }
        Op::Neg(a) => accumulate(adj, *a, g.scale(-1.0)),
        Op::Exp(a) => accumulate(adj, *a, g.zip_map(out, |g, o| g * o)),
        Op::Ln(a) => {
            // log(0) = -inf; a zero cotangent there contributes nothing.
            let ga = g.zip_map(val(*a), |g, x| if g == 0.0 { 0.0 } else { g / x });
            accumulate(adj, *a, ga)
        }
        Op::Sqrt(a) => accumulate(adj, *a, g.zip_map(out, |g, o| 0.5 * g / o)),
        Op::Erf(a) => {
            let c = 2.0 / std::f64::consts::PI.sqrt();
            accumulate(adj, *a, g.zip_map(val(*a), |g, x| g * c * (-x * x).exp()))
        }
        Op::Sigmoid(a) => accumulate(adj, *a, g.zip_map(out, |g, s| g * s * (1.0 - s))),
        Op::LeakyRelu(a) => accumulate(
            adj,
            *a,
            g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * LEAKY_RELU_SLOPE }),
        ),
        Op::Tanh(a) => accumulate(adj, *a, g.zip_map(out, |g, t| g * (1.0 - t * t))),
        Op::Softplus(a) => accumulate(adj, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                accumulate(adj, *a, g.matmul(&bv.transpose()));
            }
            if needs(*b) {
                accumulate(adj, *b, av.transpose().matmul(g));
            }
        }
        Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
        Op::Sum(a) => {
            let av = val(*a);
            accumulate(adj, *a, Tensor::filled(av.shape(), g.item()))
        }
        Op::SumAxis(a, axis) => {
            let av = val(*a);
            let (r, c) = (av.rows(), av.cols());
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                }
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::Max(a) => {
            let av = val(*a);
            let m = out.item();
            let mut ga = vec![0.0; av.len()];
            if let Some(k) = av.data().iter().position(|&v| v == m) {
                ga[k] = g.item();
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::LogSumExp(a) => {
            let av = val(*a);
            let o = out.item();
            let gi = g.item();
            let ga = av.map(|v| {
                if o == f64::NEG_INFINITY {
                    0.0
                } else {
                    gi * (v - o).exp()
                }
            });
            accumulate(adj, *a, ga)
        }
        Op::LogSumExpAxis(a, axis) => {
            let av = val(*a);
            let (r, c) = (av.rows(), av.cols());
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    let k = if *axis == 0 { j } else { i };
                    let o = out.data()[k];
                    if o != f64::NEG_INFINITY {
                        ga[i * c + j] = g.data()[k] * (av.data()[i * c + j] - o).exp();
                    }
                }
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::Take(a, idx) => {
            let av = val(*a);
            let mut ga = vec![0.0; av.len()];
            for (k, &src) in idx.iter().enumerate() {
                ga[src] += g.data()[k];
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::RepeatRows(a) => {
            let av = val(*a);
            let c = av.len();
            let mut ga = vec![0.0; c];
            for row in g.data().chunks(c) {
                for (s, v) in ga.iter_mut().zip(row) {
                    *s += v;
                }
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::RepeatCols(a) => {
            let av = val(*a);
            let m = g.cols();
            let ga: Vec<f64> = g.data().chunks(m).map(|r| r.iter().sum()).collect();
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::Reshape(a) => {
            let av = val(*a);
            accumulate(adj, *a, g.clone().reshaped(av.shape()))
        }
        Op::SliceCols(a, start) => {
            let av = val(*a);
            let (r, c) = (av.rows(), av.cols());
            let w = g.cols();
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                ga[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
            }
            accumulate(adj, *a, Tensor::new(av.shape(), ga))
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let n = pv.len();
                if needs(p) {
                    let gp = Tensor::new(pv.shape(), g.data()[offset..offset + n].to_vec());
                    accumulate(adj, p, gp);
                }
                offset += n;
            }
        }
        Op::DiagEmbed(a) => {
            let d = val(*a).len();
            let ga = (0..d).map(|i| g.data()[i * d + i]).collect();
            accumulate(adj, *a, Tensor::vector(ga))
        }
        Op::SolveLowerRows(b, w) => {
            let bv = val(*b);
            let d = bv.rows();
            let n = g.rows();
            let mut lam = vec![0.0; n * d];
            for i in 0..n {
                // back substitution with B^T
                let gi = g.row(i);
                let li = &mut lam[i * d..(i + 1) * d];
                for k in (0..d).rev() {
                    let mut s = gi[k];
                    for m in k + 1..d {
                        s -= bv.get(m, k) * li[m];
                    }
                    li[k] = s / bv.get(k, k);
                }
            }
            if needs(*b) {
                let mut gb = vec![0.0; d * d];
                for i in 0..n {
                    let zi = out.row(i);
                    for k in 0..d {
                        for l in 0..=k {
                            gb[k * d + l] -= lam[i * d + k] * zi[l];
                        }
                    }
                }
                accumulate(adj, *b, Tensor::matrix(d, d, gb));
            }
            if needs(*w) {
                accumulate(adj, *w, Tensor::new(val(*w).shape(), lam));
            }
        }
        Op::Custom(parents, rule) => {
            let gs = rule(g);
            assert_eq!(
                gs.len(),
                parents.len(),
                "custom backward rule returned {} cotangents for {} parents",
                gs.len(),
                parents.len()
            );
            for (&p, gp) in parents.iter().zip(gs) {
                assert_eq!(
                    gp.shape(),
                    val(p).shape(),
                    "custom backward rule returned a cotangent of the wrong shape"
                );
                if needs(p) {
                    accumulate(adj, p, gp);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Elementwise combination where either side may be a one-element tensor.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        a.zip_map(b, f)
    } else if b.is_scalar() {
        let bv = b.item();
        a.map(|x| f(x, bv))
    } else if a.is_scalar() {
        let av = a.item();
        b.map(|y| f(av, y))
    } else {
        panic!(
            "shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        )
    }
}

fn logsumexp_slice(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push_op(v, op(self.id))
    }

    fn binary(self, other: Var<'t>, op: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        let v = broadcast_zip(&self.value(), &other.value(), f);
        self.tape.push_op(v, op(self.id, other.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    /// Natural log. Panics on negative input; `ln(0) = -inf`.
    pub fn ln(self) -> Var<'t> {
        self.try_ln().unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_ln(self) -> Result<Var<'t>, AutodiffError> {
        if let Some(&x) = self.value().data().iter().find(|&&x| x < 0.0) {
            return Err(AutodiffError::LogOfNegative(x));
        }
        Ok(self.unary(Op::Ln, f64::ln))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn erf(self) -> Var<'t> {
        self.unary(Op::Erf, libm::erf)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn leaky_relu(self) -> Var<'t> {
        self.unary(Op::LeakyRelu, |x| if x > 0.0 { x } else { LEAKY_RELU_SLOPE * x })
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, softplus)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value());
        self.tape.push_op(v, Op::MatMul(self.id, other.id))
    }

    /// Transpose of a matrix (vectors are returned unchanged).
    pub fn t(self) -> Var<'t> {
        let v = self.value().transpose();
        self.tape.push_op(v, Op::Transpose(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.value();
        assert!(!v.is_empty(), "sum of empty tensor");
        self.tape.push_op(Tensor::scalar(v.sum()), Op::Sum(self.id))
    }

    /// Sum over `axis` of a matrix: axis 0 collapses rows, axis 1 collapses columns.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let v = self.value();
        if v.rank() < 2 {
            return self.sum();
        }
        let (r, c) = (v.rows(), v.cols());
        let out = if axis == 0 {
            (0..c).map(|j| (0..r).map(|i| v.get(i, j)).sum()).collect()
        } else {
            (0..r).map(|i| v.row(i).iter().sum()).collect()
        };
        self.tape.push_op(Tensor::vector(out), Op::SumAxis(self.id, axis))
    }

    /// Sum over the last axis: vector -> scalar, matrix -> one value per row.
    pub fn sum_last(self) -> Var<'t> {
        self.sum_axis(1)
    }

    pub fn max(self) -> Var<'t> {
        let v = self.value();
        assert!(!v.is_empty(), "max of empty tensor");
        self.tape.push_op(Tensor::scalar(v.max()), Op::Max(self.id))
    }

    /// `m + ln Σ exp(v - m)` with `m = max v`.
    pub fn logsumexp(self) -> Var<'t> {
        self.try_logsumexp().unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_logsumexp(self) -> Result<Var<'t>, AutodiffError> {
        let v = self.value();
        if v.is_empty() {
            return Err(AutodiffError::EmptyReduction);
        }
        let out = logsumexp_slice(v.data().iter().copied());
        Ok(self.tape.push_op(Tensor::scalar(out), Op::LogSumExp(self.id)))
    }

    pub fn logsumexp_axis(self, axis: usize) -> Var<'t> {
        let v = self.value();
        assert!(!v.is_empty(), "{}", AutodiffError::EmptyReduction);
        if v.rank() < 2 {
            return self.logsumexp();
        }
        let (r, c) = (v.rows(), v.cols());
        let out = if axis == 0 {
            (0..c).map(|j| logsumexp_slice((0..r).map(|i| v.get(i, j)))).collect()
        } else {
            (0..r).map(|i| logsumexp_slice(v.row(i).iter().copied())).collect()
        };
        self.tape.push_op(Tensor::vector(out), Op::LogSumExpAxis(self.id, axis))
    }

    /// Same forward value; contributes nothing to the gradient of any ancestor.
    pub fn stop_gradient(self) -> Var<'t> {
        let v = self.value();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node {
            value: v,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self.tape,
            id: nodes.len() - 1,
        }
    }

    /// Gathers flat elements `indices` into a tensor of `shape`.
    pub fn take(self, indices: Vec<usize>, shape: &[usize]) -> Var<'t> {
        let v = self.value();
        let data = indices.iter().map(|&k| v.data()[k]).collect();
        self.tape.push_op(Tensor::new(shape, data), Op::Take(self.id, indices))
    }

    /// Row selection from a matrix, repeats allowed.
    pub fn gather_rows(self, rows: &[usize]) -> Var<'t> {
        let c = self.value().cols();
        let idx = rows.iter().flat_map(|&r| (r * c)..(r * c + c)).collect::<Vec<_>>();
        self.take(idx, &[rows.len(), c])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(self, i: usize) -> Var<'t> {
        let c = self.value().cols();
        self.take((i * c..(i + 1) * c).collect(), &[c])
    }

    /// Element `i` of a vector (or flat element of a matrix) as a scalar.
    pub fn at(self, i: usize) -> Var<'t> {
        self.take(vec![i], &[])
    }

    /// Tiles a vector (or a 1-row matrix) into `n` identical rows.
    pub fn repeat_rows(self, n: usize) -> Var<'t> {
        let v = self.value();
        let c = v.len();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(v.data());
        }
        self.tape.push_op(Tensor::matrix(n, c, data), Op::RepeatRows(self.id))
    }

    /// Tiles a vector of length `r` into an `r x m` matrix with constant rows.
    pub fn repeat_cols(self, m: usize) -> Var<'t> {
        let v = self.value();
        let r = v.len();
        let data = v.data().iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
        self.tape.push_op(Tensor::matrix(r, m, data), Op::RepeatCols(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshaped(shape);
        self.tape.push_op(v, Op::Reshape(self.id))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        assert!(start <= end && end <= v.cols(), "slice_cols out of range");
        let r = v.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..end]);
        }
        self.tape
            .push_op(Tensor::matrix(r, end - start, data), Op::SliceCols(self.id, start))
    }

    /// Square diagonal matrix from a vector.
    pub fn diag_embed(self) -> Var<'t> {
        let v = self.value();
        let d = v.len();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = v.data()[i];
        }
        self.tape.push_op(Tensor::matrix(d, d, data), Op::DiagEmbed(self.id))
    }

    /// Solves `B z_i = w_i` for every row `w_i` of `self`, reading only the
    /// lower triangle of `b` (forward substitution).
    pub fn solve_lower_rows(self, b: Var<'t>) -> Var<'t> {
        let bv = b.value();
        let wv = self.value();
        let d = bv.rows();
        assert_eq!(bv.cols(), d, "triangular factor must be square");
        assert_eq!(wv.cols(), d, "right-hand side width mismatch");
        let n = wv.rows();
        let mut z = vec![0.0; n * d];
        for i in 0..n {
            let wi = wv.row(i);
            for k in 0..d {
                let mut s = wi[k];
                for l in 0..k {
                    s -= bv.get(k, l) * z[i * d + l];
                }
                z[i * d + k] = s / bv.get(k, k);
            }
        }
        self.tape
            .push_op(Tensor::new(wv.shape(), z), Op::SolveLowerRows(b.id, self.id))
    }
}

macro_rules! binary_impl {
    ($trait:ident, $method:ident, $op:ident, $f:expr) => {
        impl<'t> std::ops::$trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, Op::$op, $f)
            }
        }
        impl<'t> std::ops::$trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let c = self.tape.scalar(rhs);
                self.binary(c, Op::$op, $f)
            }
        }
        impl<'t> std::ops::$trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.scalar(self);
                c.binary(rhs, Op::$op, $f)
            }
        }
    };
}

binary_impl!(Add, add, Add, |a, b| a + b);
binary_impl!(Sub, sub, Sub, |a, b| a - b);
binary_impl!(Mul, mul, Mul, |a, b| a * b);
binary_impl!(Div, div, Div, |a, b| a / b);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x)
    }
}
