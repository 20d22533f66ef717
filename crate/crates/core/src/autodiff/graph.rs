use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to `sqrt` inputs in the backward pass.
pub const SQRT_GRAD_FLOOR: f64 = 1e-12;

const EXP_MIN: f64 = -745.0;
const EXP_MAX: f64 = 709.0;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sqrt(usize),
    Abs(usize),
    Exp(usize),
    Square(usize),
    Sigmoid(usize),
    Silu(usize),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    Broadcast(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, Rc<[usize]>),
    RotatePairs(usize, Rc<Tensor>, Rc<Tensor>),
    MaskedSoftmax(usize),
    CrossEntropy(usize, Rc<[Option<usize>]>),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Every operation on a [`Var`] appends one node.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Vec<f64>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::variable`] or [`Graph::param`].
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.leaves.get(&v.id).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    /// Adds gradients into the store. Trainable parameters that did not take
    /// part in the computation receive a zero gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        let by_id: HashMap<ParamId, &Vec<f64>> = self.params.iter().map(|(p, g)| (*p, g)).collect();
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            match by_id.get(&id) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    if t.grad().is_none() {
                        t.zero_grad();
                    }
                }
            }
        }
        Ok(())
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let mut out = [0; 2];
    for d in 0..2 {
        out[d] = if a[d] == b[d] {
            a[d]
        } else if a[d] == 1 {
            b[d]
        } else if b[d] == 1 {
            a[d]
        } else {
            return Err(Error::ShapeMismatch {
                op,
                left: a,
                right: b,
            });
        };
    }
    Ok(out)
}

#[inline]
fn bidx(shape: [usize; 2], i: usize, j: usize) -> usize {
    let r = if shape[0] == 1 { 0 } else { i };
    let c = if shape[1] == 1 { 0 } else { j };
    r * shape[1] + c
}

/// Sums a gradient of shape `from` down to a broadcast source of shape `to`.
fn reduce_to(g: &[f64], from: [usize; 2], to: [usize; 2]) -> Vec<f64> {
    if from == to {
        return g.to_vec();
    }
    let mut out = vec![0.0; to[0] * to[1]];
    for i in 0..from[0] {
        for j in 0..from[1] {
            out[bidx(to, i, j)] += g[i * from[1] + j];
        }
    }
    out
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if needs_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&self, t: Tensor) -> Var<'_> {
        self.push(t.detached(), Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&nid) = self.params.borrow().get(&id) {
            if nid < self.len() {
                return Var {
                    graph: self,
                    id: nid,
                };
            }
        }
        let t = store.get(id);
        let v = self.push(t.detached(), Op::Leaf, t.requires_grad());
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = first.rows();
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut cols = 0;
        for v in &vals {
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape(),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let needs = parts.iter().any(|p| self.needs(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatCols(ids), needs))
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            if v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape(),
                    right: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let needs = parts.iter().any(|p| self.needs(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatRows(ids), needs))
    }

    /// Reverse pass from a `1 x 1` loss. Clears the tape afterwards.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let result = self.backward_inner(loss);
        self.nodes.borrow_mut().clear();
        self.params.borrow_mut().clear();
        result
    }

    fn backward_inner(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let out = &node.value;
            let oshape = out.shape();
            let val = |p: usize| &nodes[p].value;
            let mut send = |p: usize, contrib: Vec<f64>| {
                if nodes[p].needs_grad {
                    accumulate(&mut grads[p], contrib);
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves.insert(id, g);
                }
                Op::Add(a, b) => {
                    send(*a, reduce_to(&g, oshape, val(*a).shape()));
                    send(*b, reduce_to(&g, oshape, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    send(*a, reduce_to(&g, oshape, val(*a).shape()));
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    send(*b, reduce_to(&neg, oshape, val(*b).shape()));
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (sa, sb) = (av.shape(), bv.shape());
                    let div = matches!(node.op, Op::Div(..));
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; g.len()];
                    for i in 0..oshape[0] {
                        for j in 0..oshape[1] {
                            let k = i * oshape[1] + j;
                            let x = av.data()[bidx(sa, i, j)];
                            let y = bv.data()[bidx(sb, i, j)];
                            if div {
                                ga[k] = g[k] / y;
                                gb[k] = -g[k] * x / (y * y);
                            } else {
                                ga[k] = g[k] * y;
                                gb[k] = g[k] * x;
                            }
                        }
                    }
                    send(*a, reduce_to(&ga, oshape, sa));
                    send(*b, reduce_to(&gb, oshape, sb));
                }
                Op::MatMul(a, b) => {
                    let gt = Tensor::from_vec(oshape[0], oshape[1], g)?;
                    if nodes[*a].needs_grad {
                        send(*a, gt.matmul(&val(*b).transpose())?.into_data());
                    }
                    if nodes[*b].needs_grad {
                        send(*b, val(*a).transpose().matmul(&gt)?.into_data());
                    }
                }
                Op::Transpose(a) => {
                    let gt = Tensor::from_vec(oshape[0], oshape[1], g)?;
                    send(*a, gt.transpose().into_data());
                }
                Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
                Op::AddScalar(a) | Op::Broadcast(a) => {
                    send(*a, reduce_to(&g, oshape, val(*a).shape()));
                }
                Op::Sqrt(a) => {
                    let x = val(*a);
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| g * 0.5 / x.max(SQRT_GRAD_FLOOR).sqrt())
                        .collect();
                    send(*a, d);
                }
                Op::Abs(a) => {
                    let x = val(*a);
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| {
                            if *x > 0.0 {
                                *g
                            } else if *x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    send(*a, d);
                }
                Op::Exp(a) => {
                    let x = val(*a);
                    let d = g
                        .iter()
                        .zip(x.data())
                        .zip(out.data())
                        .map(|((g, x), y)| {
                            if (EXP_MIN..=EXP_MAX).contains(x) {
                                g * y
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    send(*a, d);
                }
                Op::Square(a) => {
                    let x = val(*a);
                    send(*a, g.iter().zip(x.data()).map(|(g, x)| 2.0 * g * x).collect());
                }
                Op::Sigmoid(a) => {
                    let d = g
                        .iter()
                        .zip(out.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    send(*a, d);
                }
                Op::Silu(a) => {
                    let x = val(*a);
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| {
                            let s = sigmoid(*x);
                            g * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    send(*a, d);
                }
                Op::SumRows(a) | Op::SumCols(a) | Op::SumAll(a) => {
                    let s = val(*a).shape();
                    let mut d = vec![0.0; s[0] * s[1]];
                    for i in 0..s[0] {
                        for j in 0..s[1] {
                            d[i * s[1] + j] = g[bidx(oshape, i, j)];
                        }
                    }
                    send(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        if nodes[p].needs_grad {
                            let mut d = Vec::with_capacity(oshape[0] * c);
                            for r in 0..oshape[0] {
                                let base = r * oshape[1] + offset;
                                d.extend_from_slice(&g[base..base + c]);
                            }
                            send(p, d);
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        if nodes[p].needs_grad {
                            send(p, g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let s = val(*a).shape();
                    let mut d = vec![0.0; s[0] * s[1]];
                    for r in 0..s[0] {
                        let src = &g[r * oshape[1]..(r + 1) * oshape[1]];
                        d[r * s[1] + start..r * s[1] + start + oshape[1]].copy_from_slice(src);
                    }
                    send(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let s = val(*a).shape();
                    let mut d = vec![0.0; s[0] * s[1]];
                    d[start * s[1]..start * s[1] + g.len()].copy_from_slice(&g);
                    send(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let s = val(*a).shape();
                    let mut d = vec![0.0; s[0] * s[1]];
                    for (k, &r) in idx.iter().enumerate() {
                        for j in 0..s[1] {
                            d[r * s[1] + j] += g[k * s[1] + j];
                        }
                    }
                    send(*a, d);
                }
                Op::ScatterRows(a, idx) => {
                    let c = oshape[1];
                    let mut d = Vec::with_capacity(idx.len() * c);
                    for &r in idx.iter() {
                        d.extend_from_slice(&g[r * c..(r + 1) * c]);
                    }
                    send(*a, d);
                }
                Op::RotatePairs(a, cos, sin) => {
                    let half = oshape[1] / 2;
                    let mut d = vec![0.0; g.len()];
                    for r in 0..oshape[0] {
                        for l in 0..half {
                            let (c, s) = (cos.get(r, l), sin.get(r, l));
                            let k = r * oshape[1] + 2 * l;
                            let (g0, g1) = (g[k], g[k + 1]);
                            d[k] = c * g0 + s * g1;
                            d[k + 1] = -s * g0 + c * g1;
                        }
                    }
                    send(*a, d);
                }
                Op::MaskedSoftmax(a) => {
                    let c = oshape[1];
                    let mut d = vec![0.0; g.len()];
                    for r in 0..oshape[0] {
                        let y = &out.data()[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            d[r * c + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    send(*a, d);
                }
                Op::CrossEntropy(a, targets) => {
                    let x = val(*a);
                    let c = x.cols();
                    let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                    let mut d = vec![0.0; x.len()];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = x.row_slice(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - m).exp() / z;
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[r * c + j] = g[0] * (p - onehot) / count;
                        }
                    }
                    send(*a, d);
                }
            }
        }

        let params = self
            .params
            .borrow()
            .iter()
            .filter_map(|(pid, nid)| leaves.get(nid).map(|g| (*pid, g.clone())))
            .collect::<Vec<_>>();
        let mut params = params;
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients { leaves, params })
    }
}

// Arithmetic is fallible (shape checks), so the std operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Current forward value.
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn needs(&self) -> bool {
        self.graph.needs(self.id)
    }

    fn unary(
        self,
        name: &'static str,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var<'g>> {
        let x = self.value();
        let data: Vec<f64> = x.data().iter().map(|v| f(*v)).collect();
        ensure_finite(name, &data)?;
        let t = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.graph.push(t, op, self.needs()))
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> Result<f64>,
    ) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                data.push(f(
                    a.data()[bidx(a.shape(), i, j)],
                    b.data()[bidx(b.shape(), i, j)],
                )?);
            }
        }
        ensure_finite(name, &data)?;
        let t = Tensor::from_vec(shape[0], shape[1], data)?;
        let needs = self.needs() || other.needs();
        Ok(self.graph.push(t, op, needs))
    }

    pub fn add(self, o: Var<'g>) -> Result<Var<'g>> {
        self.binary(o, "add", Op::Add(self.id, o.id), |a, b| Ok(a + b))
    }

    pub fn sub(self, o: Var<'g>) -> Result<Var<'g>> {
        self.binary(o, "sub", Op::Sub(self.id, o.id), |a, b| Ok(a - b))
    }

    pub fn mul(self, o: Var<'g>) -> Result<Var<'g>> {
        self.binary(o, "mul", Op::Mul(self.id, o.id), |a, b| Ok(a * b))
    }

    pub fn div(self, o: Var<'g>) -> Result<Var<'g>> {
        self.binary(o, "div", Op::Div(self.id, o.id), |a, b| {
            if b == 0.0 {
                Err(Error::DivisionByZero("div"))
            } else {
                Ok(a / b)
            }
        })
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary("scale", Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + c)
    }

    /// Square root; negative inputs saturate to 0.
    pub fn sqrt(self) -> Result<Var<'g>> {
        self.unary("sqrt", Op::Sqrt(self.id), |v| v.max(0.0).sqrt())
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.unary("abs", Op::Abs(self.id), f64::abs)
    }

    /// Exponential with the input saturated to the finite range of `f64`.
    pub fn exp(self) -> Result<Var<'g>> {
        self.unary("exp", Op::Exp(self.id), |v| v.clamp(EXP_MIN, EXP_MAX).exp())
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.unary("square", Op::Square(self.id), |v| v * v)
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn silu(self) -> Result<Var<'g>> {
        self.unary("silu", Op::Silu(self.id), |v| v * sigmoid(v))
    }

    pub fn matmul(self, o: Var<'g>) -> Result<Var<'g>> {
        let t = self.value().matmul(&o.value())?;
        ensure_finite("matmul", t.data())?;
        let needs = self.needs() || o.needs();
        Ok(self.graph.push(t, Op::MatMul(self.id, o.id), needs))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let t = self.value().transpose();
        Ok(self.graph.push(t, Op::Transpose(self.id), self.needs()))
    }

    /// Reduction over `axis`: 0 collapses rows (`[1, c]`), 1 collapses columns (`[r, 1]`).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        let (t, op) = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                        *o += v;
                    }
                }
                (Tensor::from_vec(1, c, out)?, Op::SumRows(self.id))
            }
            1 => {
                let out = (0..r).map(|i| x.row_slice(i).iter().sum()).collect();
                (Tensor::from_vec(r, 1, out)?, Op::SumCols(self.id))
            }
            _ => return Err(Error::InvalidArgument(format!("axis {axis} out of range"))),
        };
        ensure_finite("sum", t.data())?;
        Ok(self.graph.push(t, op, self.needs()))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let n = self.shape()[axis.min(1)];
        if n == 0 {
            return Err(Error::EmptyInput("mean"));
        }
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let x = self.value();
        let s: f64 = x.data().iter().sum();
        ensure_finite("sum", &[s])?;
        Ok(self
            .graph
            .push(Tensor::scalar(s), Op::SumAll(self.id), self.needs()))
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.value().len();
        if n == 0 {
            return Err(Error::EmptyInput("mean"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn broadcast_to(self, shape: [usize; 2]) -> Result<Var<'g>> {
        let x = self.value();
        let s = x.shape();
        if broadcast_shape("broadcast", s, shape)? != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                left: s,
                right: shape,
            });
        }
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                data.push(x.data()[bidx(s, i, j)]);
            }
        }
        let t = Tensor::from_vec(shape[0], shape[1], data)?;
        Ok(self.graph.push(t, Op::Broadcast(self.id), self.needs()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        if start > end || end > c {
            return Err(Error::IndexOutOfRange { index: end, len: c });
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let t = Tensor::from_vec(r, end - start, data)?;
        Ok(self
            .graph
            .push(t, Op::SliceCols(self.id, start), self.needs()))
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        if start > end || end > r {
            return Err(Error::IndexOutOfRange { index: end, len: r });
        }
        let t = Tensor::from_vec(end - start, c, x.data()[start * c..end * c].to_vec())?;
        Ok(self
            .graph
            .push(t, Op::SliceRows(self.id, start), self.needs()))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let t = Tensor::from_vec(idx.len(), c, data)?;
        Ok(self
            .graph
            .push(t, Op::GatherRows(self.id, idx.into()), self.needs()))
    }

    /// Scatter-add row `k` of `self` into row `idx[k]` of a zero `rows x c` matrix.
    pub fn scatter_rows(self, idx: &[usize], rows: usize) -> Result<Var<'g>> {
        let x = self.value();
        let c = x.cols();
        if idx.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                actual: idx.len(),
            });
        }
        let mut data = vec![0.0; rows * c];
        for (k, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            for (d, v) in data[i * c..(i + 1) * c].iter_mut().zip(x.row_slice(k)) {
                *d += v;
            }
        }
        let t = Tensor::from_vec(rows, c, data)?;
        Ok(self
            .graph
            .push(t, Op::ScatterRows(self.id, idx.into()), self.needs()))
    }

    /// Rotates each adjacent column pair `(2l, 2l+1)` of row `r` by the angle
    /// whose cosine and sine are `cos[r, l]`, `sin[r, l]`.
    pub fn rotate_pairs(self, cos: Rc<Tensor>, sin: Rc<Tensor>) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        if c % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "rotate_pairs needs an even width, got {c}"
            )));
        }
        if cos.shape() != [r, c / 2] || sin.shape() != [r, c / 2] {
            return Err(Error::ShapeMismatch {
                op: "rotate_pairs",
                left: [r, c / 2],
                right: cos.shape(),
            });
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for l in 0..c / 2 {
                let (cs, sn) = (cos.get(i, l), sin.get(i, l));
                let (x0, x1) = (x.get(i, 2 * l), x.get(i, 2 * l + 1));
                data[i * c + 2 * l] = cs * x0 - sn * x1;
                data[i * c + 2 * l + 1] = sn * x0 + cs * x1;
            }
        }
        let t = Tensor::from_vec(r, c, data)?;
        Ok(self
            .graph
            .push(t, Op::RotatePairs(self.id, cos, sin), self.needs()))
    }

    /// Row-wise softmax; entries with `mask[k] == true` are excluded and get 0.
    pub fn masked_softmax(self, mask: &[bool]) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        if mask.len() != r * c {
            return Err(Error::DimensionMismatch {
                expected: r * c,
                actual: mask.len(),
            });
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row_slice(i);
            let m = &mask[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &masked)| !masked)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "softmax row {i} is fully masked"
                )));
            }
            let mut z = 0.0;
            for j in 0..c {
                if !m[j] {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    z += e;
                }
            }
            for v in &mut data[i * c..(i + 1) * c] {
                *v /= z;
            }
        }
        ensure_finite("masked_softmax", &data)?;
        let t = Tensor::from_vec(r, c, data)?;
        Ok(self
            .graph
            .push(t, Op::MaskedSoftmax(self.id), self.needs()))
    }

    /// Mean cross-entropy of row-wise logits against targets; `None` rows are ignored.
    pub fn cross_entropy(self, targets: &[Option<usize>]) -> Result<Var<'g>> {
        let x = self.value();
        let [r, c] = x.shape();
        if targets.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                actual: targets.len(),
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(Error::IndexOutOfRange { index: t, len: c });
            }
            let row = x.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("cross_entropy: every target is ignored"));
        }
        let loss = total / count as f64;
        ensure_finite("cross_entropy", &[loss])?;
        Ok(self.graph.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(self.id, targets.into()),
            self.needs(),
        ))
    }
}
