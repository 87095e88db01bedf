//! The recording tape and its closed set of differentiable primitives.
//!
//! Every primitive computes its forward value eagerly and appends one node.
//! [`Tape::backward`] walks the nodes in reverse, so operands always precede
//! their results. Scatter reductions sum in arc order, which keeps forward
//! values and gradients bit-reproducible.

use std::sync::Arc;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::graph::Index;

/// Numerical floor inside the RMS normalisation root.
pub const RMS_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `b` may be a `1 × m` row broadcast over the rows of `a`.
    Add(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Swish(Var),
    GatherRows(Var, Index),
    ScatterAddRows(Var, Index, usize),
    ScatterMaxRows(Var, Index, usize),
    RmsNorm(Var, Var),
    ConcatCols(Vec<Var>),
    Scale(Var, f64),
    SumAll(Var),
    L1Masked(Var, Var, Arc<[f64]>),
    MseMasked(Var, Var, Arc<[f64]>),
}

/// Forward-pass byproducts needed by some adjoints.
#[derive(Clone, Debug, PartialEq)]
enum Saved {
    None,
    /// Source row per output element (`usize::MAX` for empty targets).
    ArgMax(Vec<usize>),
    /// `1 / rms` per row.
    InvRms(Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    saved: Saved,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, saved: Saved, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, saved, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, Saved::None, false)
    }

    /// Records a parameter leaf; trainable parameters receive gradients.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push(store.value(id).clone(), Op::Param(id), Saved::None, trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, saved) = eval(&Op::MatMul(a, b), |v| self.value(v))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), saved, rg))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Hadamard(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x), &[x])
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Swish(x), &[x])
    }

    /// `out[i] = x[index[i]]`.
    pub fn gather_rows(&mut self, x: Var, index: &Index) -> Result<Var> {
        self.record(Op::GatherRows(x, index.clone()), &[x])
    }

    /// `out[index[i]] += x[i]`, summed in increasing `i`.
    pub fn scatter_add_rows(&mut self, x: Var, index: &Index, out_rows: usize) -> Result<Var> {
        self.record(Op::ScatterAddRows(x, index.clone(), out_rows), &[x])
    }

    /// Per-column maximum of the rows sent to each target; empty targets are 0.
    /// Ties resolve to the lowest source row.
    pub fn scatter_max_rows(&mut self, x: Var, index: &Index, out_rows: usize) -> Result<Var> {
        self.record(Op::ScatterMaxRows(x, index.clone(), out_rows), &[x])
    }

    /// Row-wise `w ⊙ x / sqrt(mean(x²) + RMS_EPS)` with `w` a `1 × d` row.
    pub fn rms_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        self.record(Op::RmsNorm(x, w), &[x, w])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(x, factor), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumAll(x), &[x])
    }

    /// Weighted mean absolute error over rows: `Σ w_i |p_i - t_i| / (cols · Σ w_i)`.
    /// Binary weights give the usual masked mean.
    pub fn l1_masked(&mut self, pred: Var, target: Var, mask: &Arc<[f64]>) -> Result<Var> {
        self.record(Op::L1Masked(pred, target, mask.clone()), &[pred, target])
    }

    /// Weighted mean squared error, normalised like [`Tape::l1_masked`].
    pub fn mse_masked(&mut self, pred: Var, target: Var, mask: &Arc<[f64]>) -> Result<Var> {
        self.record(Op::MseMasked(pred, target, mask.clone()), &[pred, target])
    }

    fn record(&mut self, op: Op, operands: &[Var]) -> Result<Var> {
        let (value, saved) = eval(&op, |v| self.value(v))?;
        let rg = self.needs(operands);
        Ok(self.push(value, op, saved, rg))
    }

    /// Recomputes every node from the recorded leaves and reports whether all
    /// values (and saved byproducts) come out bit-identical.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let (value, saved) = match node.op {
                Op::Constant | Op::Param(_) => (node.value.clone(), Saved::None),
                ref op => eval(op, |v| &values[v.0])?,
            };
            if value.data() != node.value.data() || value.shape() != node.value.shape() {
                return Ok(false);
            }
            if saved != node.saved {
                return Ok(false);
            }
            values.push(value);
        }
        Ok(true)
    }

    /// Accumulates `d loss / d p` into `params` for every trainable parameter
    /// leaf. Constants receive nothing; the tape itself is left unchanged.
    pub fn backward(&self, loss: Var, params: &mut ParamStore) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::LossNotScalar(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, params);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParamStore,
    ) {
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => params.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if want(*a) {
                    let ga = grad_slot(grads, *a, av.shape());
                    gemm(g, false, bv, true, ga, 1.0);
                }
                if want(*b) {
                    let gb = grad_slot(grads, *b, bv.shape());
                    gemm(av, true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    add_into(grad_slot(grads, *a, g.shape()), g.data());
                }
                if want(*b) {
                    let bshape = self.shape(*b);
                    let gb = grad_slot(grads, *b, bshape);
                    if bshape == g.shape() {
                        add_into(gb, g.data());
                    } else {
                        for r in 0..g.rows() {
                            for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if want(*a) {
                    let ga = grad_slot(grads, *a, av.shape());
                    for ((acc, gv), bx) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *acc += gv * bx;
                    }
                }
                if want(*b) {
                    let gb = grad_slot(grads, *b, bv.shape());
                    for ((acc, gv), ax) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *acc += gv * ax;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = grad_slot(grads, *x, xv.shape());
                for ((acc, gv), xx) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    if *xx > 0.0 {
                        *acc += gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let gx = grad_slot(grads, *x, node.value.shape());
                for ((acc, gv), s) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *acc += gv * s * (1.0 - s);
                }
            }
            Op::Swish(x) => {
                let xv = self.value(*x);
                let gx = grad_slot(grads, *x, xv.shape());
                for ((acc, gv), xx) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    let s = sigmoid(*xx);
                    *acc += gv * (s + xx * s * (1.0 - s));
                }
            }
            Op::GatherRows(x, index) => {
                let gx = grad_slot(grads, *x, self.shape(*x));
                for (i, &src) in index.iter().enumerate() {
                    for (acc, v) in gx.row_mut(src).iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
            }
            Op::ScatterAddRows(x, index, _) => {
                let gx = grad_slot(grads, *x, self.shape(*x));
                for (i, &dst) in index.iter().enumerate() {
                    for (acc, v) in gx.row_mut(i).iter_mut().zip(g.row(dst)) {
                        *acc += v;
                    }
                }
            }
            Op::ScatterMaxRows(x, _, _) => {
                let Saved::ArgMax(arg) = &node.saved else { unreachable!() };
                let cols = g.cols();
                let gx = grad_slot(grads, *x, self.shape(*x));
                for (k, &src) in arg.iter().enumerate() {
                    if src != usize::MAX {
                        let col = k % cols;
                        gx.data_mut()[src * cols + col] += g.data()[k];
                    }
                }
            }
            Op::RmsNorm(x, w) => {
                let Saved::InvRms(inv) = &node.saved else { unreachable!() };
                let (xv, wv) = (self.value(*x), self.value(*w));
                let d = xv.cols();
                if want(*w) {
                    let gw = grad_slot(grads, *w, wv.shape());
                    for r in 0..xv.rows() {
                        for ((acc, gv), xx) in gw.data_mut().iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                            *acc += gv * xx * inv[r];
                        }
                    }
                }
                if want(*x) {
                    let gx = grad_slot(grads, *x, xv.shape());
                    for r in 0..xv.rows() {
                        let ir = inv[r];
                        let (gr, xr, wr) = (g.row(r), xv.row(r), wv.data());
                        let mut dot = 0.0;
                        for k in 0..d {
                            dot += gr[k] * wr[k] * xr[k] * ir;
                        }
                        let mean = dot / d as f64;
                        for (k, acc) in gx.row_mut(r).iter_mut().enumerate() {
                            *acc += ir * (gr[k] * wr[k] - xr[k] * ir * mean);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    if want(*p) {
                        let gp = grad_slot(grads, *p, (rows, cols));
                        for r in 0..rows {
                            for (acc, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *acc += v;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::Scale(x, f) => {
                let gx = grad_slot(grads, *x, g.shape());
                for (acc, v) in gx.data_mut().iter_mut().zip(g.data()) {
                    *acc += f * v;
                }
            }
            Op::SumAll(x) => {
                let s = g.data()[0];
                let gx = grad_slot(grads, *x, self.shape(*x));
                gx.data_mut().iter_mut().for_each(|acc| *acc += s);
            }
            Op::L1Masked(p, t, mask) | Op::MseMasked(p, t, mask) => {
                let squared = matches!(node.op, Op::MseMasked(..));
                let (pv, tv) = (self.value(*p), self.value(*t));
                let cols = pv.cols();
                let norm = cols as f64 * mask.iter().sum::<f64>();
                let s = g.data()[0] / norm;
                let mut local = Tensor::zeros(pv.rows(), cols);
                for r in 0..pv.rows() {
                    let w = mask[r];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..cols {
                        let diff = pv.get(r, c) - tv.get(r, c);
                        let d = if squared { 2.0 * diff } else { sign(diff) };
                        local.set(r, c, s * w * d);
                    }
                }
                if want(*p) {
                    add_into(grad_slot(grads, *p, pv.shape()), local.data());
                }
                if want(*t) {
                    let gt = grad_slot(grads, *t, tv.shape());
                    for (acc, v) in gt.data_mut().iter_mut().zip(local.data()) {
                        *acc -= v;
                    }
                }
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn add_into(acc: &mut Tensor, values: &[f64]) {
    for (a, v) in acc.data_mut().iter_mut().zip(values) {
        *a += v;
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

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.rows(), x.cols(), data).expect("same length")
}

fn check_index(index: &[usize], bound: usize, what: &str) -> Result<()> {
    if let Some(&bad) = index.iter().find(|&&i| i >= bound) {
        return Err(Error::IndexOutOfRange(format!("{what}: index {bad} with bound {bound}")));
    }
    Ok(())
}

fn check_mask(what: &str, mask: &[f64], rows: usize) -> Result<()> {
    if mask.len() != rows {
        return Err(Error::ShapeMismatch(format!("{what}: mask of {} for {rows} rows", mask.len())));
    }
    if mask.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::ShapeMismatch(format!("{what}: mask weights must be finite and >= 0")));
    }
    if mask.iter().sum::<f64>() <= 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Forward evaluation of one primitive given its operand values.
fn eval<'a>(op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Result<(Tensor, Saved)> {
    let out = match op {
        Op::Constant | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => (val(*a).matmul(val(*b))?, Saved::None),
        Op::Add(a, b) => {
            let (a, b) = (val(*a), val(*b));
            let mut out = a.clone();
            if a.shape() == b.shape() {
                add_into(&mut out, b.data());
            } else if b.rows() == 1 && b.cols() == a.cols() {
                for r in 0..out.rows() {
                    for (o, v) in out.row_mut(r).iter_mut().zip(b.data()) {
                        *o += v;
                    }
                }
            } else {
                same_shape("add", a, b)?;
            }
            (out, Saved::None)
        }
        Op::Hadamard(a, b) => {
            let (a, b) = (val(*a), val(*b));
            same_shape("hadamard", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            (Tensor::from_vec(a.rows(), a.cols(), data)?, Saved::None)
        }
        Op::Relu(x) => (map(val(*x), |v| v.max(0.0)), Saved::None),
        Op::Sigmoid(x) => (map(val(*x), sigmoid), Saved::None),
        Op::Swish(x) => (map(val(*x), |v| v * sigmoid(v)), Saved::None),
        Op::GatherRows(x, index) => {
            let x = val(*x);
            check_index(index, x.rows(), "gather_rows")?;
            (x.select_rows(index), Saved::None)
        }
        Op::ScatterAddRows(x, index, out_rows) => {
            let x = val(*x);
            if index.len() != x.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "scatter_add_rows: {} indices for {} rows",
                    index.len(),
                    x.rows()
                )));
            }
            check_index(index, *out_rows, "scatter_add_rows")?;
            let mut out = Tensor::zeros(*out_rows, x.cols());
            for (i, &dst) in index.iter().enumerate() {
                for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            (out, Saved::None)
        }
        Op::ScatterMaxRows(x, index, out_rows) => {
            let x = val(*x);
            if index.len() != x.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "scatter_max_rows: {} indices for {} rows",
                    index.len(),
                    x.rows()
                )));
            }
            check_index(index, *out_rows, "scatter_max_rows")?;
            let cols = x.cols();
            let mut out = Tensor::zeros(*out_rows, cols);
            let mut arg = vec![usize::MAX; out_rows * cols];
            for (i, &dst) in index.iter().enumerate() {
                for c in 0..cols {
                    let k = dst * cols + c;
                    let v = x.get(i, c);
                    if arg[k] == usize::MAX || v > out.data()[k] {
                        arg[k] = i;
                        out.data_mut()[k] = v;
                    }
                }
            }
            (out, Saved::ArgMax(arg))
        }
        Op::RmsNorm(x, w) => {
            let (x, w) = (val(*x), val(*w));
            if w.rows() != 1 || w.cols() != x.cols() || x.cols() == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "rms_norm: input {}x{}, weight {}x{}",
                    x.rows(),
                    x.cols(),
                    w.rows(),
                    w.cols()
                )));
            }
            let d = x.cols() as f64;
            let mut out = Tensor::zeros(x.rows(), x.cols());
            let mut inv = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let ms = x.row(r).iter().map(|v| v * v).sum::<f64>() / d;
                let ir = 1.0 / (ms + RMS_EPS).sqrt();
                inv.push(ir);
                for ((o, xv), wv) in out.row_mut(r).iter_mut().zip(x.row(r)).zip(w.data()) {
                    *o = wv * xv * ir;
                }
            }
            (out, Saved::InvRms(inv))
        }
        Op::ConcatCols(parts) => {
            let rows = parts.first().map_or(0, |p| val(*p).rows());
            if parts.iter().any(|p| val(*p).rows() != rows) {
                return Err(Error::ShapeMismatch("concat_cols: row counts differ".into()));
            }
            let cols: usize = parts.iter().map(|p| val(*p).cols()).sum();
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                    offset += pv.cols();
                }
            }
            (out, Saved::None)
        }
        Op::Scale(x, f) => (map(val(*x), |v| v * f), Saved::None),
        Op::SumAll(x) => (Tensor::scalar(val(*x).sum()), Saved::None),
        Op::L1Masked(p, t, mask) | Op::MseMasked(p, t, mask) => {
            let (p, t) = (val(*p), val(*t));
            same_shape("masked loss", p, t)?;
            check_mask("masked loss", mask, p.rows())?;
            let squared = matches!(op, Op::MseMasked(..));
            let mut total = 0.0;
            for r in 0..p.rows() {
                let w = mask[r];
                if w == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for c in 0..p.cols() {
                    let d = p.get(r, c) - t.get(r, c);
                    row += if squared { d * d } else { d.abs() };
                }
                total += w * row;
            }
            let norm = p.cols() as f64 * mask.iter().sum::<f64>();
            (Tensor::scalar(total / norm), Saved::None)
        }
    };
    Ok(out)
}
