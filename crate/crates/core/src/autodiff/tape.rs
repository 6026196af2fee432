//! Reverse-mode differentiation on a per-step tape.
//!
//! A [`Tape`] records every primitive applied during a forward pass and
//! replays them in reverse to accumulate gradients. Graphs are rebuilt each
//! training step (sequence lengths vary per batch), and parameters enter a
//! tape as leaf nodes snapshotting the current [`ParamStore`] values.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::autodiff::kernels;
use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<(u32, ParamId)> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    MatMulTB(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Embed { table: usize, ids: Vec<usize> },
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    MeanRows(usize),
    MeanCols(usize),
    SumAll(usize),
    PickPerRow { x: usize, ids: Vec<usize> },
    SelectRows { x: usize, rows: Vec<usize> },
    AttnMix { weights: usize, states: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Shared handle to a recording tape. Cheap to clone; not thread-safe by
/// design (graph construction is single-threaded, see module docs).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl std::fmt::Debug for Var {
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
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.borrow().nodes.is_empty()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].needs_grad)
    }

    fn shape(&self, id: usize) -> [usize; 2] {
        self.inner.borrow().nodes[id].value.shape()
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Differentiable leaf snapshotting a parameter value. `store_key`
    /// selects which store receives the gradient in [`Tape::backward`]
    /// (0 for the common single-store case).
    pub fn param(&self, store_key: u32, store: &ParamStore, id: ParamId) -> Var {
        self.push(
            store.value(id).clone(),
            Op::Leaf {
                param: Some((store_key, id)),
            },
            true,
        )
    }

    /// Accumulates d(loss)/d(param) into each referenced store. `loss`
    /// must be scalar. Calling this again without zeroing grads adds on
    /// top of the previous accumulation.
    pub fn backward(&self, loss: &Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        debug_assert!(Rc::ptr_eq(&self.inner, &loss.tape.inner));
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        if nodes[loss.id].value.shape() != [1, 1] {
            return Err(CoreError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            match &nodes[id].op {
                Op::Leaf { param } => {
                    if let Some((key, pid)) = param {
                        let store = stores.get_mut(*key as usize).ok_or_else(|| {
                            CoreError::InvalidArgument(format!(
                                "backward: no store for key {key}"
                            ))
                        })?;
                        store.accumulate_grad(*pid, &dy);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, nodes, *a, &dy);
                    accumulate(&mut grads, nodes, *b, &dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, nodes, *a, &dy);
                    let mut neg = dy.clone();
                    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                    accumulate(&mut grads, nodes, *b, &neg);
                }
                Op::Mul(a, b) => {
                    if nodes[*a].needs_grad {
                        let mut da = dy.clone();
                        for (v, bv) in da.data_mut().iter_mut().zip(nodes[*b].value.data()) {
                            *v *= bv;
                        }
                        accumulate(&mut grads, nodes, *a, &da);
                    }
                    if nodes[*b].needs_grad {
                        let mut db = dy.clone();
                        for (v, av) in db.data_mut().iter_mut().zip(nodes[*a].value.data()) {
                            *v *= av;
                        }
                        accumulate(&mut grads, nodes, *b, &db);
                    }
                }
                Op::AddBias(x, b) => {
                    accumulate(&mut grads, nodes, *x, &dy);
                    if nodes[*b].needs_grad {
                        let n = dy.cols();
                        let mut db = Tensor::zeros(1, n);
                        for row in dy.data().chunks(n) {
                            for (d, v) in db.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, nodes, *b, &db);
                    }
                }
                Op::Scale(x, c) => {
                    let mut dx = dy.clone();
                    dx.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::MatMul(a, b) => {
                    let ta = &nodes[*a].value;
                    let tb = &nodes[*b].value;
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if nodes[*a].needs_grad {
                        let da = kernels::matmul_tb(dy.data(), tb.data(), m, n, k);
                        accumulate(&mut grads, nodes, *a, &Tensor::from_vec(m, k, da)?);
                    }
                    if nodes[*b].needs_grad {
                        let db = kernels::matmul_ta(ta.data(), dy.data(), m, k, n);
                        accumulate(&mut grads, nodes, *b, &Tensor::from_vec(k, n, db)?);
                    }
                }
                Op::MatMulTB(a, b) => {
                    let ta = &nodes[*a].value;
                    let tb = &nodes[*b].value;
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                    if nodes[*a].needs_grad {
                        let da = kernels::matmul(dy.data(), tb.data(), m, n, k);
                        accumulate(&mut grads, nodes, *a, &Tensor::from_vec(m, k, da)?);
                    }
                    if nodes[*b].needs_grad {
                        let db = kernels::matmul_ta(dy.data(), ta.data(), m, n, k);
                        accumulate(&mut grads, nodes, *b, &Tensor::from_vec(n, k, db)?);
                    }
                }
                Op::Tanh(x) => {
                    let mut dx = dy.clone();
                    for (v, y) in dx.data_mut().iter_mut().zip(nodes[id].value.data()) {
                        *v *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy.clone();
                    for (v, y) in dx.data_mut().iter_mut().zip(nodes[id].value.data()) {
                        *v *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::Softmax(x) => {
                    // dx = y ⊙ (dy − <dy, y>) per row
                    let y = &nodes[id].value;
                    let n = y.cols();
                    let mut dx = Tensor::zeros(y.rows(), n);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let s = kernels::dot(dyr, yr);
                        for ((d, &yv), &dv) in
                            dx.row_mut(r).iter_mut().zip(yr).zip(dyr)
                        {
                            *d = yv * (dv - s);
                        }
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::LogSoftmax(x) => {
                    // dx = dy − softmax(x) * sum(dy) per row
                    let y = &nodes[id].value;
                    let n = y.cols();
                    let mut dx = Tensor::zeros(y.rows(), n);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dyr = dy.row(r);
                        let s: f64 = dyr.iter().sum();
                        for ((d, &yv), &dv) in
                            dx.row_mut(r).iter_mut().zip(yr).zip(dyr)
                        {
                            *d = dv - yv.exp() * s;
                        }
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::Embed { table, ids } => {
                    if nodes[*table].needs_grad {
                        let tv = &nodes[*table].value;
                        let e = tv.cols();
                        let mut dt = Tensor::zeros(tv.rows(), e);
                        for (r, &tok) in ids.iter().enumerate() {
                            let src = dy.row(r);
                            for (d, v) in dt.row_mut(tok).iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, nodes, *table, &dt);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let pc = nodes[p].value.cols();
                        if nodes[p].needs_grad {
                            let mut dp = Tensor::zeros(dy.rows(), pc);
                            for r in 0..dy.rows() {
                                dp.row_mut(r)
                                    .copy_from_slice(&dy.row(r)[start..start + pc]);
                            }
                            accumulate(&mut grads, nodes, p, &dp);
                        }
                        start += pc;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = &nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..dy.rows() {
                        dx.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::MeanRows(x) => {
                    let xv = &nodes[*x].value;
                    let scale = 1.0 / xv.rows() as f64;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(dy.row(0)) {
                            *d = v * scale;
                        }
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::MeanCols(x) => {
                    let xv = &nodes[*x].value;
                    let scale = 1.0 / xv.cols() as f64;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let g = dy.at(r, 0) * scale;
                        dx.row_mut(r).iter_mut().for_each(|d| *d = g);
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::SumAll(x) => {
                    let xv = &nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    dx.fill(dy.item());
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::PickPerRow { x, ids } => {
                    let xv = &nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &c) in ids.iter().enumerate() {
                        dx.set(r, c, dy.at(r, 0));
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::SelectRows { x, rows } => {
                    let xv = &nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for (d, v) in dx.row_mut(src_r).iter_mut().zip(dy.row(out_r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, nodes, *x, &dx);
                }
                Op::AttnMix { weights, states } => {
                    let wv = &nodes[*weights].value;
                    let m = wv.rows();
                    if nodes[*weights].needs_grad {
                        let mut dw = Tensor::zeros(m, states.len());
                        for (t, &s) in states.iter().enumerate() {
                            let sv = &nodes[s].value;
                            for r in 0..m {
                                dw.set(r, t, kernels::dot(dy.row(r), sv.row(r)));
                            }
                        }
                        accumulate(&mut grads, nodes, *weights, &dw);
                    }
                    for (t, &s) in states.iter().enumerate() {
                        if !nodes[s].needs_grad {
                            continue;
                        }
                        let mut ds = Tensor::zeros(m, nodes[s].value.cols());
                        for r in 0..m {
                            let w = wv.at(r, t);
                            for (d, v) in ds.row_mut(r).iter_mut().zip(dy.row(r)) {
                                *d = w * v;
                            }
                        }
                        accumulate(&mut grads, nodes, s, &ds);
                    }
                }
            }
        }
        Ok(())
    }

    /// Single-store convenience for [`Tape::backward`].
    pub fn backward_into(&self, loss: &Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss, &mut [store])
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: &Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            debug_assert!(acc.same_shape(g));
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g.clone()),
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.shape(self.id)
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    /// Borrow of the node value.
    pub fn value(&self) -> Ref<'_, Tensor> {
        Ref::map(self.tape.inner.borrow(), |inner| {
            &inner.nodes[self.id].value
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Var) {
        debug_assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars from different tapes"
        );
    }

    fn binary_same_shape(
        &self,
        other: &Var,
        op: &'static str,
        f: impl Fn(usize, usize) -> Op,
        apply: impl Fn(&mut f64, f64),
    ) -> Result<Var> {
        self.same_tape(other);
        let mut value = self.to_tensor();
        {
            let o = other.value();
            if !value.same_shape(&o) {
                return Err(CoreError::ShapeMismatch {
                    op,
                    lhs: value.shape().to_vec(),
                    rhs: o.shape().to_vec(),
                });
            }
            for (a, b) in value.data_mut().iter_mut().zip(o.data()) {
                apply(a, *b);
            }
        }
        let ng = self.tape.needs_grad(&[self.id, other.id]);
        Ok(self.tape.push(value, f(self.id, other.id), ng))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, "add", Op::Add, |a, b| *a += b)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, "sub", Op::Sub, |a, b| *a -= b)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, "mul", Op::Mul, |a, b| *a *= b)
    }

    /// `self[m,n] + bias[1,n]`, broadcast over rows.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        self.same_tape(bias);
        let mut value = self.to_tensor();
        {
            let b = bias.value();
            if b.rows() != 1 || b.cols() != value.cols() {
                return Err(CoreError::ShapeMismatch {
                    op: "add_bias",
                    lhs: value.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let n = value.cols();
            for row in value.data_mut().chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
        }
        let ng = self.tape.needs_grad(&[self.id, bias.id]);
        Ok(self.tape.push(value, Op::AddBias(self.id, bias.id), ng))
    }

    pub fn scale(&self, c: f64) -> Var {
        let mut value = self.to_tensor();
        value.data_mut().iter_mut().for_each(|v| *v *= c);
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::Scale(self.id, c), ng)
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = kernels::matmul(a.data(), b.data(), a.rows(), a.cols(), b.cols());
        let value = Tensor::from_vec(a.rows(), b.cols(), out)?;
        drop((a, b));
        let ng = self.tape.needs_grad(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), ng))
    }

    /// `self[m,k] * other[n,k]^T -> [m,n]`. This is how logits project onto
    /// a shared embedding table.
    pub fn matmul_tb(&self, other: &Var) -> Result<Var> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.cols() {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_tb",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = kernels::matmul_tb(a.data(), b.data(), a.rows(), a.cols(), b.rows());
        let value = Tensor::from_vec(a.rows(), b.rows(), out)?;
        drop((a, b));
        let ng = self.tape.needs_grad(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMulTB(self.id, other.id), ng))
    }

    pub fn tanh(&self) -> Var {
        let mut value = self.to_tensor();
        value.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::Tanh(self.id), ng)
    }

    pub fn sigmoid(&self) -> Var {
        let mut value = self.to_tensor();
        value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::Sigmoid(self.id), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var {
        let mut value = self.to_tensor();
        let n = value.cols();
        kernels::softmax_rows(value.data_mut(), n);
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::Softmax(self.id), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Var {
        let mut value = self.to_tensor();
        let n = value.cols();
        kernels::log_softmax_rows(value.data_mut(), n);
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::LogSoftmax(self.id), ng)
    }

    /// Row lookup: `self` is an embedding table `[v,e]`, output `[ids.len(), e]`.
    pub fn embed(&self, ids: &[usize]) -> Result<Var> {
        let table = self.value();
        if ids.is_empty() {
            return Err(CoreError::InvalidArgument("embed: empty id list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= table.rows()) {
            return Err(CoreError::InvalidArgument(format!(
                "embed: id {bad} out of range for table with {} rows",
                table.rows()
            )));
        }
        let e = table.cols();
        let mut value = Tensor::zeros(ids.len(), e);
        for (r, &tok) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(table.row(tok));
        }
        drop(table);
        let ng = self.tape.needs_grad(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::Embed {
                table: self.id,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let x = self.value();
        if start + len > x.cols() || len == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "slice_cols: [{start}, {start}+{len}) out of range for {} cols",
                x.cols()
            )));
        }
        let mut value = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            value.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        drop(x);
        let ng = self.tape.needs_grad(&[self.id]);
        Ok(self
            .tape
            .push(value, Op::SliceCols { x: self.id, start }, ng))
    }

    /// Mean over rows: `[m,n] -> [1,n]`.
    pub fn mean_rows(&self) -> Var {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut value = Tensor::zeros(1, n);
        for r in 0..m {
            for (d, v) in value.data_mut().iter_mut().zip(x.row(r)) {
                *d += v;
            }
        }
        value.data_mut().iter_mut().for_each(|v| *v /= m as f64);
        drop(x);
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::MeanRows(self.id), ng)
    }

    /// Mean over cols: `[m,n] -> [m,1]`.
    pub fn mean_cols(&self) -> Var {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut value = Tensor::zeros(m, 1);
        for r in 0..m {
            let s: f64 = x.row(r).iter().sum();
            value.set(r, 0, s / n as f64);
        }
        drop(x);
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, Op::MeanCols(self.id), ng)
    }

    pub fn sum_all(&self) -> Var {
        let s: f64 = self.value().data().iter().sum();
        let ng = self.tape.needs_grad(&[self.id]);
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id), ng)
    }

    /// Per-row gather: out[r,0] = self[r, ids[r]].
    pub fn pick_per_row(&self, ids: &[usize]) -> Result<Var> {
        let x = self.value();
        if ids.len() != x.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "pick_per_row",
                lhs: x.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&c| c >= x.cols()) {
            return Err(CoreError::InvalidArgument(format!(
                "pick_per_row: column {bad} out of range for {} cols",
                x.cols()
            )));
        }
        let mut value = Tensor::zeros(x.rows(), 1);
        for (r, &c) in ids.iter().enumerate() {
            value.set(r, 0, x.at(r, c));
        }
        drop(x);
        let ng = self.tape.needs_grad(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::PickPerRow {
                x: self.id,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Row gather: out[j,:] = self[rows[j],:].
    pub fn select_rows(&self, rows: &[usize]) -> Result<Var> {
        let x = self.value();
        if rows.is_empty() {
            return Err(CoreError::InvalidArgument(
                "select_rows: empty row list".into(),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(CoreError::InvalidArgument(format!(
                "select_rows: row {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let mut value = Tensor::zeros(rows.len(), x.cols());
        for (out_r, &src_r) in rows.iter().enumerate() {
            value.row_mut(out_r).copy_from_slice(x.row(src_r));
        }
        drop(x);
        let ng = self.tape.needs_grad(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SelectRows {
                x: self.id,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }
}

impl Tape {
    /// Column-wise concatenation of 2-D vars with equal row counts.
    pub fn concat_cols(&self, parts: &[&Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument("concat_cols: no inputs".into()));
        }
        let m = parts[0].rows();
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s[0] != m {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![m],
                    rhs: s.to_vec(),
                });
            }
            total += s[1];
        }
        let mut value = Tensor::zeros(m, total);
        let mut start = 0;
        for p in parts {
            let pv = p.value();
            for r in 0..m {
                value.row_mut(r)[start..start + pv.cols()].copy_from_slice(pv.row(r));
            }
            start += pv.cols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let ng = self.needs_grad(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), ng))
    }

    /// Convex mixture of per-timestep state matrices: out[r,:] =
    /// Σ_t weights[r,t] * states[t][r,:]. The attention context vector.
    pub fn attn_mix(&self, weights: &Var, states: &[&Var]) -> Result<Var> {
        let w = weights.value();
        if states.is_empty() || w.cols() != states.len() {
            return Err(CoreError::ShapeMismatch {
                op: "attn_mix",
                lhs: w.shape().to_vec(),
                rhs: vec![states.len()],
            });
        }
        let m = w.rows();
        let h = states[0].cols();
        for s in states {
            let sh = s.shape();
            if sh != [m, h] {
                return Err(CoreError::ShapeMismatch {
                    op: "attn_mix",
                    lhs: vec![m, h],
                    rhs: sh.to_vec(),
                });
            }
        }
        let mut value = Tensor::zeros(m, h);
        for (t, s) in states.iter().enumerate() {
            let sv = s.value();
            for r in 0..m {
                let wv = w.at(r, t);
                for (d, v) in value.row_mut(r).iter_mut().zip(sv.row(r)) {
                    *d += wv * v;
                }
            }
        }
        drop(w);
        let mut ids: Vec<usize> = vec![weights.id];
        ids.extend(states.iter().map(|s| s.id));
        let ng = self.needs_grad(&ids);
        Ok(self.push(
            value,
            Op::AttnMix {
                weights: weights.id,
                states: ids[1..].to_vec(),
            },
            ng,
        ))
    }
}
