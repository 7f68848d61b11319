//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op evaluates eagerly and appends one node holding its value and a
//! backward rule. Node ids are assigned in evaluation order, so the node list
//! is already topologically sorted; [`Tape::backward`] walks it once in
//! reverse. A tape is rebuilt for each forward pass and is not `Send`.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{softmax_into, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    MatMulTn(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    ScaleBy(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Reshape(usize),
    SliceBlock { src: usize, r0: usize, c0: usize },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    RepeatRows(usize, usize),
    GatherRows(usize, Vec<usize>),
    Sigmoid(usize),
    LogSigmoid(usize),
    Exp(usize),
    Log(usize),
    Silu(usize),
    Gelu(usize),
    SoftmaxRows(usize, f64),
    LayerNorm { src: usize, inv_std: Vec<f64> },
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulNt(a, b) | MatMulTn(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b)
            | MulRow(a, b) | ScaleBy(a, b) => vec![*a, *b],
            ConcatRows(xs) | ConcatCols(xs) => xs.clone(),
            GatherRows(t, _) => vec![*t],
            Transpose(a) | Scale(a, _) | AddConst(a) | Reshape(a) | RepeatRows(a, _)
            | Sigmoid(a) | LogSigmoid(a) | Exp(a) | Log(a) | Silu(a) | Gelu(a)
            | SoftmaxRows(a, _) | Sum(a) | Mean(a) | MeanRows(a) => vec![*a],
            SliceBlock { src, .. } | LayerNorm { src, .. } => vec![*src],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

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

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
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

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let _ = name;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss was not recorded on this tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients recovered by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.shape().as_slice()),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, delta: Tensor) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    grads[id] = Some(match grads[id].take() {
        Some(g) => g.add(&delta)?,
        None => delta,
    });
    Ok(())
}

fn col_sums(g: &Tensor) -> Tensor {
    let (r, c) = (g.rows(), g.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, &x) in out.iter_mut().zip(g.row(i)) {
            *o += x;
        }
    }
    Tensor::from_parts(vec![1, c], out)
}

fn broadcast_rows(g: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let c = g.cols();
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, row.data()[i % c]))
        .collect();
    Tensor::from_parts(g.shape().to_vec(), data)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = val(id);
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, g.matmul_nt(val(*b))?)?;
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, val(*a).matmul_tn(g)?)?;
            }
        }
        Op::MatMulNt(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, g.matmul(val(*b))?)?;
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, g.matmul_tn(val(*a))?)?;
            }
        }
        Op::MatMulTn(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, val(*b).matmul_nt(g)?)?;
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, val(*a).matmul(g)?)?;
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()?)?,
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone())?;
            accumulate(grads, nodes, *b, g.clone())?;
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone())?;
            accumulate(grads, nodes, *b, g.scale(-1.0))?;
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, *a, g.mul(val(*b))?)?;
            accumulate(grads, nodes, *b, g.mul(val(*a))?)?;
        }
        Op::AddRow(a, r) => {
            accumulate(grads, nodes, *a, g.clone())?;
            if nodes[*r].requires_grad {
                accumulate(grads, nodes, *r, col_sums(g))?;
            }
        }
        Op::MulRow(a, r) => {
            accumulate(grads, nodes, *a, broadcast_rows(g, val(*r), |x, y| x * y))?;
            if nodes[*r].requires_grad {
                accumulate(grads, nodes, *r, col_sums(&g.mul(val(*a))?))?;
            }
        }
        Op::ScaleBy(a, s) => {
            let sv = val(*s).item();
            accumulate(grads, nodes, *a, g.scale(sv))?;
            if nodes[*s].requires_grad {
                let d: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(grads, nodes, *s, Tensor::from_parts(val(*s).shape().to_vec(), vec![d]))?;
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.scale(*c))?,
        Op::AddConst(a) => accumulate(grads, nodes, *a, g.clone())?,
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.reshape(val(*a).shape())?)?,
        Op::SliceBlock { src, r0, c0 } => {
            let s = val(*src);
            let (sc, oc) = (s.cols(), g.cols());
            let mut d = vec![0.0; s.numel()];
            for i in 0..g.rows() {
                let dst = &mut d[(r0 + i) * sc + c0..(r0 + i) * sc + c0 + oc];
                dst.copy_from_slice(g.row(i));
            }
            accumulate(grads, nodes, *src, Tensor::from_parts(s.shape().to_vec(), d))?;
        }
        Op::ConcatRows(parts) => {
            let c = g.cols();
            let mut offset = 0;
            for &p in parts {
                let rows = val(p).rows();
                let d = g.data()[offset * c..(offset + rows) * c].to_vec();
                accumulate(grads, nodes, p, Tensor::from_parts(val(p).shape().to_vec(), d))?;
                offset += rows;
            }
        }
        Op::ConcatCols(parts) => {
            let (r, c) = (g.rows(), g.cols());
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).cols();
                let mut d = Vec::with_capacity(r * pc);
                for i in 0..r {
                    d.extend_from_slice(&g.data()[i * c + offset..i * c + offset + pc]);
                }
                accumulate(grads, nodes, p, Tensor::from_parts(val(p).shape().to_vec(), d))?;
                offset += pc;
            }
        }
        Op::RepeatRows(a, times) => {
            let src = val(*a);
            let c = src.cols();
            let mut d = vec![0.0; src.numel()];
            for (i, row) in d.chunks_mut(c).enumerate() {
                for r in 0..*times {
                    for (x, &y) in row.iter_mut().zip(g.row(i * times + r)) {
                        *x += y;
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(src.shape().to_vec(), d))?;
        }
        Op::GatherRows(table, idx) => {
            if nodes[*table].requires_grad {
                let t = val(*table);
                let c = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (i, &row) in idx.iter().enumerate() {
                    for (x, &y) in d[row * c..(row + 1) * c].iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                accumulate(grads, nodes, *table, Tensor::from_parts(t.shape().to_vec(), d))?;
            }
        }
        Op::Sigmoid(a) => accumulate(grads, nodes, *a, g.zip_with(out, "sigmoid'", |g, y| g * y * (1.0 - y))?)?,
        Op::LogSigmoid(a) => {
            accumulate(grads, nodes, *a, g.zip_with(val(*a), "log_sigmoid'", |g, x| g * sigmoid(-x))?)?
        }
        Op::Exp(a) => accumulate(grads, nodes, *a, g.mul(out)?)?,
        Op::Log(a) => accumulate(grads, nodes, *a, g.zip_with(val(*a), "log'", |g, x| g / x)?)?,
        Op::Silu(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_with(val(*a), "silu'", |g, x| {
                let s = sigmoid(x);
                g * s * (1.0 + x * (1.0 - s))
            })?,
        )?,
        Op::Gelu(a) => accumulate(grads, nodes, *a, g.zip_with(val(*a), "gelu'", |g, x| g * gelu_grad(x))?)?,
        Op::SoftmaxRows(a, scale) => {
            let c = g.cols();
            let mut d = vec![0.0; g.numel()];
            for i in 0..g.rows() {
                let (gr, yr) = (g.row(i), out.row(i));
                let inner: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    d[i * c + j] = scale * yr[j] * (gr[j] - inner);
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(g.shape().to_vec(), d))?;
        }
        Op::LayerNorm { src, inv_std } => {
            let c = g.cols();
            let mut d = vec![0.0; g.numel()];
            for i in 0..g.rows() {
                let (gr, xh) = (g.row(i), out.row(i));
                let mean_g = gr.iter().sum::<f64>() / c as f64;
                let mean_gx = gr.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    d[i * c + j] = inv_std[i] * (gr[j] - mean_g - xh[j] * mean_gx);
                }
            }
            accumulate(grads, nodes, *src, Tensor::from_parts(g.shape().to_vec(), d))?;
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), g.item()))?,
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), g.item() / n))?
        }
        Op::MeanRows(a) => {
            let src = val(*a);
            let m = src.rows() as f64;
            let c = src.cols();
            let d = (0..src.numel()).map(|i| g.data()[i % c] / m).collect();
            accumulate(grads, nodes, *a, Tensor::from_parts(src.shape().to_vec(), d))?;
        }
    }
    Ok(())
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

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1..].iter().product()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("vars belong to different tapes"))
        }
    }

    fn unary(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.push(name, value, op)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().matmul(&other.value())?;
        self.tape.push("matmul", v, Op::MatMul(self.id, other.id))
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().matmul_nt(&other.value())?;
        self.tape.push("matmul_nt", v, Op::MatMulNt(self.id, other.id))
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().matmul_tn(&other.value())?;
        self.tape.push("matmul_tn", v, Op::MatMulTn(self.id, other.id))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        self.unary("transpose", v, Op::Transpose(self.id))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().add(&other.value())?;
        self.tape.push("add", v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().sub(&other.value())?;
        self.tape.push("sub", v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let v = self.value().mul(&other.value())?;
        self.tape.push("mul", v, Op::Mul(self.id, other.id))
    }

    fn check_row(&self, row: &Var<'t>, op: &'static str) -> Result<()> {
        self.same_tape(row)?;
        let (s, r) = (self.shape(), row.shape());
        if s.len() != 2 || r.len() != 2 || r[0] != 1 || r[1] != s[1] {
            return Err(Error::shape(op, &s, &r));
        }
        Ok(())
    }

    /// Adds a `1×n` row vector to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.check_row(&row, "add_row")?;
        let v = broadcast_rows(&self.value(), &row.value(), |a, b| a + b);
        self.tape.push("add_row", v, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a `1×n` row vector.
    pub fn mul_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.check_row(&row, "mul_row")?;
        let v = broadcast_rows(&self.value(), &row.value(), |a, b| a * b);
        self.tape.push("mul_row", v, Op::MulRow(self.id, row.id))
    }

    /// Multiplies by a one-element var.
    pub fn scale_by(&self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&s)?;
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(Error::shape("scale_by", &self.shape(), sv.shape()));
        }
        let v = self.value().scale(sv.item());
        self.tape.push("scale_by", v, Op::ScaleBy(self.id, s.id))
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let v = self.value().scale(c);
        self.unary("scale", v, Op::Scale(self.id, c))
    }

    pub fn add_const(&self, c: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x + c);
        self.unary("add_const", v, Op::AddConst(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        self.unary("reshape", v, Op::Reshape(self.id))
    }

    /// Rectangular sub-block `[r0, r0+rows) × [c0, c0+cols)` of a matrix.
    pub fn slice(&self, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var<'t>> {
        let src = self.value();
        let shape = src.shape();
        if shape.len() != 2 || r0 + rows > shape[0] || c0 + cols > shape[1] || rows == 0 || cols == 0 {
            return Err(Error::shape("slice", shape, &[r0 + rows, c0 + cols]));
        }
        let sc = shape[1];
        let mut d = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            d.extend_from_slice(&src.data()[i * sc + c0..i * sc + c0 + cols]);
        }
        let v = Tensor::from_parts(vec![rows, cols], d);
        self.unary("slice", v, Op::SliceBlock { src: self.id, r0, c0 })
    }

    pub fn slice_rows(&self, r0: usize, rows: usize) -> Result<Var<'t>> {
        self.slice(r0, rows, 0, self.cols())
    }

    pub fn slice_cols(&self, c0: usize, cols: usize) -> Result<Var<'t>> {
        self.slice(0, self.rows(), c0, cols)
    }

    /// Splits into consecutive row blocks of the given sizes.
    pub fn split_rows(&self, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let mut offset = 0;
        sizes
            .iter()
            .map(|&s| {
                let v = self.slice_rows(offset, s);
                offset += s;
                v
            })
            .collect()
    }

    /// Stacks each row `times` times in place (`m×n` → `(m·times)×n`).
    pub fn repeat_rows(&self, times: usize) -> Result<Var<'t>> {
        let src = self.value();
        let c = src.cols();
        let mut d = Vec::with_capacity(src.numel() * times);
        for i in 0..src.rows() {
            for _ in 0..times {
                d.extend_from_slice(src.row(i));
            }
        }
        let v = Tensor::from_parts(vec![src.rows() * times, c], d);
        self.unary("repeat_rows", v, Op::RepeatRows(self.id, times))
    }

    /// Selects rows of an embedding table.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let table = self.value();
        let c = table.cols();
        let mut d = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= table.rows() {
                return Err(Error::contract(format!("row index {i} out of {} rows", table.rows())));
            }
            d.extend_from_slice(table.row(i));
        }
        let v = Tensor::from_parts(vec![idx.len(), c], d);
        self.unary("gather_rows", v, Op::GatherRows(self.id, idx.to_vec()))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        let v = self.value().map(sigmoid);
        self.unary("sigmoid", v, Op::Sigmoid(self.id))
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&self) -> Result<Var<'t>> {
        let v = self.value().map(log_sigmoid);
        self.unary("log_sigmoid", v, Op::LogSigmoid(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let v = self.value().map(f64::exp);
        self.unary("exp", v, Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let v = self.value().map(f64::ln);
        self.unary("log", v, Op::Log(self.id))
    }

    pub fn silu(&self) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * sigmoid(x));
        self.unary("silu", v, Op::Silu(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Var<'t>> {
        let v = self.value().map(gelu);
        self.unary("gelu", v, Op::Gelu(self.id))
    }

    pub fn softmax_rows(&self, scale: f64) -> Result<Var<'t>> {
        let v = self.value().softmax_rows(scale)?;
        self.unary("softmax_rows", v, Op::SoftmaxRows(self.id, scale))
    }

    /// Per-row normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>> {
        let src = self.value();
        let (r, c) = (src.rows(), src.cols());
        let mut d = vec![0.0; src.numel()];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                d[i * c + j] = (row[j] - mean) * inv;
            }
            inv_std.push(inv);
        }
        let v = Tensor::from_parts(src.shape().to_vec(), d);
        self.unary("layer_norm", v, Op::LayerNorm { src: self.id, inv_std })
    }

    /// Layer norm followed by a learnable per-column gain and bias.
    pub fn layer_norm_affine(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.layer_norm(eps)?.mul_row(gain)?.add_row(bias)
    }

    /// `self · w + b` with `b` a `1×n` row.
    pub fn linear(&self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.matmul(w)?.add_row(b)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().sum());
        self.unary("sum", v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().mean());
        self.unary("mean", v, Op::Mean(self.id))
    }

    /// Column means (`m×n` → `1×n`).
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let src = self.value();
        let (r, c) = (src.rows(), src.cols());
        let mut d = vec![0.0; c];
        for i in 0..r {
            for (o, &x) in d.iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        for o in &mut d {
            *o /= r as f64;
        }
        let v = Tensor::from_parts(vec![1, c], d);
        self.unary("mean_rows", v, Op::MeanRows(self.id))
    }
}

/// Concatenates matrices along rows.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
    let c = first.cols();
    let mut d = Vec::new();
    let mut rows = 0;
    for p in parts {
        first.same_tape(p)?;
        let v = p.value();
        if v.shape().len() != 2 || v.cols() != c {
            return Err(Error::shape("concat_rows", &first.shape(), v.shape()));
        }
        rows += v.rows();
        d.extend_from_slice(v.data());
    }
    let v = Tensor::from_parts(vec![rows, c], d);
    first.tape.push("concat_rows", v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
}

/// Concatenates matrices along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
    let r = first.rows();
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        if v.shape().len() != 2 || v.rows() != r {
            return Err(Error::shape("concat_cols", &first.shape(), v.shape()));
        }
    }
    let total: usize = values.iter().map(|v| v.cols()).sum();
    let mut d = Vec::with_capacity(r * total);
    for i in 0..r {
        for v in &values {
            d.extend_from_slice(v.row(i));
        }
    }
    let v = Tensor::from_parts(vec![r, total], d);
    first.tape.push("concat_cols", v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
}

/// Plain-value softmax for callers that do not need a tape.
pub fn softmax_row(row: &[f64], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_into(row, scale, &mut out);
    out
}
