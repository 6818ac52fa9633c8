use std::cell::RefCell;
use std::rc::Rc;

use super::special::{digamma_unchecked, lgamma_unchecked, sigmoid, softplus, trigamma_unchecked};
use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Exp,
    Log,
    Square,
    Sqrt,
    Tanh,
    Softplus,
    LeakyRelu,
    Lgamma,
    Digamma,
    Scale(f64),
    Shift(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    MatMul(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SumRows(usize),
    SumCols(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Select { mask: Rc<Vec<bool>>, a: usize, b: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// A tape is single-threaded; independent tapes can run on different
/// threads. Drop the tape (or build a new one) per training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Result of [`Var::backward`]: one gradient per node reachable from the root.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.id];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric {
            stage: op.to_string(),
        })
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<[usize; 2]> {
    let mut out = [0; 2];
    for d in 0..2 {
        let (x, y) = (a.shape()[d], b.shape()[d]);
        out[d] = if x == y {
            x
        } else if x == 1 {
            y
        } else if y == 1 {
            x
        } else {
            return Err(dim_err(op, a, b));
        };
    }
    Ok(out)
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    r * t.cols() + c
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

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn binary(&self, kind: Binary, a: usize, b: usize) -> Result<Var<'_>> {
        let (av, bv) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let [r, c] = broadcast_shape(name, &av, &bv)?;
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let x = ad[bidx(&av, i, j)];
                let y = bd[bidx(&bv, i, j)];
                out.push(match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => {
                        if y == 0.0 {
                            return Err(Error::Domain("division by zero".into()));
                        }
                        x / y
                    }
                });
            }
        }
        let t = finite(name, Tensor::new(r, c, out)?)?;
        Ok(self.push(t, Op::Binary(kind, a, b), self.rg(&[a, b])))
    }

    fn unary(&self, kind: Unary, a: usize) -> Result<Var<'_>> {
        let av = self.value(a);
        let (name, domain_ok): (&'static str, fn(f64) -> bool) = match kind {
            Unary::Neg => ("neg", |_| true),
            Unary::Exp => ("exp", |_| true),
            Unary::Log => ("log", |x| x > 0.0),
            Unary::Square => ("square", |_| true),
            Unary::Sqrt => ("sqrt", |x| x >= 0.0),
            Unary::Tanh => ("tanh", |_| true),
            Unary::Softplus => ("softplus", |_| true),
            Unary::LeakyRelu => ("leaky_relu", |_| true),
            Unary::Lgamma => ("lgamma", |x| x > 0.0),
            Unary::Digamma => ("digamma", |x| x > 0.0),
            Unary::Scale(_) => ("scale", |_| true),
            Unary::Shift(_) => ("shift", |_| true),
            Unary::Clamp(..) => ("clamp", |_| true),
        };
        if let Some(bad) = av.data().iter().find(|&&x| !domain_ok(x)) {
            return Err(Error::Domain(format!("{name} undefined at {bad}")));
        }
        let f = |x: f64| match kind {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Unary::Lgamma => lgamma_unchecked(x),
            Unary::Digamma => digamma_unchecked(x),
            Unary::Scale(c) => c * x,
            Unary::Shift(c) => x + c,
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        };
        let t = finite(name, av.map(f))?;
        Ok(self.push(t, Op::Unary(kind, a), self.rg(&[a])))
    }

    /// Back-propagates from `root`, which must be `1 × 1`.
    fn backward(&self, root: usize) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root].value.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));

        fn acc(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(s) => {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for id in (0..=root).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                &Op::Binary(kind, a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    let (ad, bd) = (av.data(), bv.data());
                    for i in 0..out.rows() {
                        for j in 0..out.cols() {
                            let gv = g.get(i, j);
                            let (ia, ib) = (bidx(av, i, j), bidx(bv, i, j));
                            let (x, y) = (ad[ia], bd[ib]);
                            let (dx, dy) = match kind {
                                Binary::Add => (gv, gv),
                                Binary::Sub => (gv, -gv),
                                Binary::Mul => (gv * y, gv * x),
                                Binary::Div => (gv / y, -gv * x / (y * y)),
                            };
                            ga.data_mut()[ia] += dx;
                            gb.data_mut()[ib] += dy;
                        }
                    }
                    if nodes[a].requires_grad {
                        acc(&mut grads[a], ga);
                    }
                    if nodes[b].requires_grad {
                        acc(&mut grads[b], gb);
                    }
                }
                &Op::Unary(kind, a) => {
                    let x = nodes[a].value.data();
                    let y = out.data();
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| {
                            let (x, y) = (x[k], y[k]);
                            gv * match kind {
                                Unary::Neg => -1.0,
                                Unary::Exp => y,
                                Unary::Log => 1.0 / x,
                                Unary::Square => 2.0 * x,
                                Unary::Sqrt => {
                                    if y > 0.0 {
                                        0.5 / y
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Tanh => 1.0 - y * y,
                                Unary::Softplus => sigmoid(x),
                                Unary::LeakyRelu => {
                                    if x > 0.0 {
                                        1.0
                                    } else {
                                        LEAKY_SLOPE
                                    }
                                }
                                Unary::Lgamma => digamma_unchecked(x),
                                Unary::Digamma => trigamma_unchecked(x),
                                Unary::Scale(c) => c,
                                Unary::Shift(_) => 1.0,
                                Unary::Clamp(lo, hi) => {
                                    if x >= lo && x <= hi {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                            }
                        })
                        .collect();
                    acc(&mut grads[a], Tensor::new(out.rows(), out.cols(), d)?);
                }
                &Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if nodes[a].requires_grad {
                        let bt = bv.transpose();
                        let d = matmul_raw(g.data(), bt.data(), m, n, k);
                        acc(&mut grads[a], Tensor::new(m, k, d)?);
                    }
                    if nodes[b].requires_grad {
                        let at = av.transpose();
                        let d = matmul_raw(at.data(), g.data(), k, m, n);
                        acc(&mut grads[b], Tensor::new(k, n, d)?);
                    }
                }
                &Op::SumAll(a) | &Op::MeanAll(a) => {
                    let av = &nodes[a].value;
                    let mut s = g.data()[0];
                    if matches!(node.op, Op::MeanAll(_)) {
                        s /= av.len() as f64;
                    }
                    acc(&mut grads[a], Tensor::full(av.rows(), av.cols(), s));
                }
                &Op::SumRows(a) => {
                    let av = &nodes[a].value;
                    let t = Tensor::from_fn(av.rows(), av.cols(), |i, _| g.data()[i]);
                    acc(&mut grads[a], t);
                }
                &Op::SumCols(a) => {
                    let av = &nodes[a].value;
                    let t = Tensor::from_fn(av.rows(), av.cols(), |_, j| g.data()[j]);
                    acc(&mut grads[a], t);
                }
                &Op::Softmax(a) => {
                    let (r, c) = (out.rows(), out.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let y = out.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads[a], Tensor::new(r, c, d)?);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = nodes[p].value.cols();
                        if nodes[p].requires_grad {
                            let t = Tensor::from_fn(out.rows(), pc, |i, j| g.get(i, off + j));
                            acc(&mut grads[p], t);
                        }
                        off += pc;
                    }
                }
                &Op::Slice { src, start } => {
                    let sv = &nodes[src].value;
                    let w = out.cols();
                    let t = Tensor::from_fn(sv.rows(), sv.cols(), |i, j| {
                        if j >= start && j < start + w {
                            g.get(i, j - start)
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads[src], t);
                }
                Op::Select { mask, a, b } => {
                    let pick = |take: bool| {
                        let d = g
                            .data()
                            .iter()
                            .zip(mask.iter())
                            .map(|(&gv, &m)| if m == take { gv } else { 0.0 })
                            .collect();
                        Tensor::new(out.rows(), out.cols(), d)
                    };
                    if nodes[*a].requires_grad {
                        acc(&mut grads[*a], pick(true)?);
                    }
                    if nodes[*b].requires_grad {
                        acc(&mut grads[*b], pick(false)?);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| [n.value.rows(), n.value.cols()]).collect(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        let v = self.value();
        [v.rows(), v.cols()]
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(self.id)
    }

    pub fn add(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Add, self.id, o.id)
    }
    pub fn sub(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Sub, self.id, o.id)
    }
    pub fn mul(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Mul, self.id, o.id)
    }
    pub fn div(self, o: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Div, self.id, o.id)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Neg, self.id)
    }
    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Exp, self.id)
    }
    pub fn ln(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Log, self.id)
    }
    pub fn square(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Square, self.id)
    }
    /// Square root; the derivative at exactly 0 is taken to be 0.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Sqrt, self.id)
    }
    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Tanh, self.id)
    }
    pub fn softplus(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Softplus, self.id)
    }
    pub fn leaky_relu(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::LeakyRelu, self.id)
    }
    pub fn lgamma(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Lgamma, self.id)
    }
    pub fn digamma(self) -> Result<Var<'t>> {
        self.tape.unary(Unary::Digamma, self.id)
    }
    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.tape.unary(Unary::Scale(c), self.id)
    }
    pub fn shift(self, c: f64) -> Result<Var<'t>> {
        self.tape.unary(Unary::Shift(c), self.id)
    }
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.tape.unary(Unary::Clamp(lo, hi), self.id)
    }

    pub fn matmul(self, o: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), o.value());
        let t = a.matmul(&b)?;
        let t = finite("matmul", t)?;
        Ok(self.tape.push(t, Op::MatMul(self.id, o.id), self.tape.rg(&[self.id, o.id])))
    }

    /// `self · w + b` with `b` broadcast over rows.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.matmul(w)?.add(b)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let t = Tensor::scalar(self.value().sum());
        let t = finite("sum", t)?;
        Ok(self.tape.push(t, Op::SumAll(self.id), self.tape.rg(&[self.id])))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let t = Tensor::scalar(v.sum() / v.len() as f64);
        Ok(self.tape.push(t, Op::MeanAll(self.id), self.tape.rg(&[self.id])))
    }

    /// Sums each row, giving a `rows × 1` column.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let v = self.value();
        let t = Tensor::column((0..v.rows()).map(|i| v.row_slice(i).iter().sum()).collect());
        let t = finite("sum_rows", t)?;
        Ok(self.tape.push(t, Op::SumRows(self.id), self.tape.rg(&[self.id])))
    }

    /// Sums each column, giving a `1 × cols` row.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let v = self.value();
        let mut s = vec![0.0; v.cols()];
        for i in 0..v.rows() {
            for (a, b) in s.iter_mut().zip(v.row_slice(i)) {
                *a += b;
            }
        }
        let t = finite("sum_cols", Tensor::row(s))?;
        Ok(self.tape.push(t, Op::SumCols(self.id), self.tape.rg(&[self.id])))
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = (v.rows(), v.cols());
        let mut d = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            d.extend(e.iter().map(|x| x / s));
        }
        let t = finite("softmax", Tensor::new(r, c, d)?)?;
        Ok(self.tape.push(t, Op::Softmax(self.id), self.tape.rg(&[self.id])))
    }

    /// Concatenates along columns.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let r = vals[0].rows();
        for v in &vals {
            if v.rows() != r {
                return Err(dim_err("concat", &vals[0], v));
            }
        }
        let c: usize = vals.iter().map(|v| v.cols()).sum();
        let mut d = Vec::with_capacity(r * c);
        for i in 0..r {
            for v in &vals {
                d.extend_from_slice(v.row_slice(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        Ok(tape.push(Tensor::new(r, c, d)?, Op::Concat(ids), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start >= end || end > v.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: v.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let t = Tensor::from_fn(v.rows(), end - start, |i, j| v.get(i, start + j));
        Ok(self.tape.push(t, Op::Slice { src: self.id, start }, self.tape.rg(&[self.id])))
    }

    /// Element-wise `mask ? self : other`.
    pub fn select(self, mask: Vec<bool>, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() || mask.len() != a.len() {
            return Err(dim_err("select", &a, &b));
        }
        let d = a
            .data()
            .iter()
            .zip(b.data())
            .zip(&mask)
            .map(|((&x, &y), &m)| if m { x } else { y })
            .collect();
        let t = Tensor::new(a.rows(), a.cols(), d)?;
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(
            t,
            Op::Select {
                mask: Rc::new(mask),
                a: self.id,
                b: other.id,
            },
            rg,
        ))
    }
}
