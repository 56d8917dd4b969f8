//! Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//!
//! Every operation appends a node to the [`Graph`]; the recording order is a
//! valid topological order, so [`Graph::backward`] walks the tape once in
//! reverse. Nodes whose inputs never require a gradient are still recorded
//! (their values are needed) but are skipped during the backward sweep.

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Clip(Var, f64, f64),
    Transpose(Var),
    BroadcastRows(Var),
    MaxSubtract { x: Var, argmax: Vec<usize> },
    MaskedSoftmax { x: Var, mask: Vec<bool>, tau: f64 },
    MaskedLogSoftmax { x: Var, mask: Vec<bool>, tau: f64 },
    ReduceMax { x: Var, argmax: Vec<usize> },
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    /// Records a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        t.dims2()?;
        let mut value = t.clone();
        value.grad = None;
        let requires_grad = t.requires_grad;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        t.dims2()?;
        let mut value = t;
        value.requires_grad = false;
        value.grad = None;
        Ok(self.push(value, Op::Leaf, false))
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let (r, c) = self.dims(x);
        let t = Tensor::matrix(r, c, data).expect("unary shape");
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    fn binary_same(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let (r, c) = self.dims(a);
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    /// `x (R×C) + row (1×C)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(row) != (1, c) {
            return Err(shape_err("add_row", self.value(x), self.value(row)));
        }
        let rv = self.value(row).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(&rv).for_each(|(d, b)| *d += b);
        }
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[x, row]);
        Ok(self.push(t, Op::AddRow(x, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("min", a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clip(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, data).expect("transpose");
        let rg = self.rg(&[x]);
        self.push(t, Op::Transpose(x), rg)
    }

    /// Repeats a `1×C` row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != 1 || rows == 0 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: vec![r, c],
                rhs: vec![rows, c],
            });
        }
        let row = self.value(x).data().to_vec();
        let data: Vec<f64> = (0..rows).flat_map(|_| row.iter().copied()).collect();
        let t = Tensor::matrix(rows, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::BroadcastRows(x), rg))
    }

    /// Subtracts each row's maximum from that row.
    pub fn max_subtract(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut data = src.to_vec();
        let mut argmax = Vec::with_capacity(r);
        for row in data.chunks_mut(c) {
            let (j, m) = row_argmax(row.iter().copied().enumerate());
            argmax.push(j);
            row.iter_mut().for_each(|v| *v -= m);
        }
        let t = Tensor::matrix(r, c, data).expect("max_subtract");
        let rg = self.rg(&[x]);
        self.push(t, Op::MaxSubtract { x, argmax }, rg)
    }

    /// Row-wise softmax of `x / tau` restricted to `mask` (true = admissible).
    ///
    /// Each row is shifted by its maximum over admissible entries before
    /// exponentiation. Inadmissible entries are exactly zero. A row with no
    /// admissible entry is rejected.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool], tau: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        check_mask(r, c, mask, tau)?;
        let data = masked_softmax_rows(self.value(x).data(), mask, r, c, tau)?;
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::MaskedSoftmax {
                x,
                mask: mask.to_vec(),
                tau,
            },
            rg,
        ))
    }

    /// Row-wise log-softmax of `x / tau` over admissible entries.
    /// Inadmissible entries hold `0.0` and carry no gradient.
    pub fn masked_log_softmax(&mut self, x: Var, mask: &[bool], tau: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        check_mask(r, c, mask, tau)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = row_max_masked(row, &mask[i * c..(i + 1) * c]).ok_or(Error::EmptyRow { row: i })?;
            let lse: f64 = row
                .iter()
                .zip(&mask[i * c..(i + 1) * c])
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| ((v - m) / tau).exp())
                .sum::<f64>()
                .ln();
            for j in 0..c {
                if mask[i * c + j] {
                    data[i * c + j] = (row[j] - m) / tau - lse;
                }
            }
        }
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::MaskedLogSoftmax {
                x,
                mask: mask.to_vec(),
                tau,
            },
            rg,
        ))
    }

    /// Column-wise maximum over rows: `R×C → 1×C` (max pooling over rows).
    pub fn reduce_max(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut argmax = Vec::with_capacity(c);
        let mut data = Vec::with_capacity(c);
        for j in 0..c {
            let (i, m) = row_argmax((0..r).map(|i| (i, src[i * c + j])));
            argmax.push(i);
            data.push(m);
        }
        let t = Tensor::matrix(1, c, data).expect("reduce_max");
        let rg = self.rg(&[x]);
        self.push(t, Op::ReduceMax { x, argmax }, rg)
    }

    /// Row sums: `R×C → R×1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let data = self.value(x).data().chunks(c).map(|row| row.iter().sum()).collect();
        let t = Tensor::matrix(r, 1, data).expect("sum_rows");
        let rg = self.rg(&[x]);
        self.push(t, Op::SumRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let r = self.dims(first).0;
        let mut total = 0;
        for &x in xs {
            if self.dims(x).0 != r {
                return Err(shape_err("concat_cols", self.value(first), self.value(x)));
            }
            total += self.dims(x).1;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &x in xs {
                data.extend_from_slice(self.value(x).row_slice(i));
            }
        }
        let t = Tensor::matrix(r, total, data)?;
        let rg = self.rg(xs);
        Ok(self.push(t, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let c = self.dims(first).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            if self.dims(x).1 != c {
                return Err(shape_err("concat_rows", self.value(first), self.value(x)));
            }
            rows += self.dims(x).0;
            data.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::matrix(rows, c, data)?;
        let rg = self.rg(xs);
        Ok(self.push(t, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Picks `x[i, idx[i]]` for every row: `R×C → R×1`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if idx.len() != r {
            return Err(Error::Shape {
                op: "gather",
                lhs: vec![r, c],
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::OutOfRange {
                what: "gather",
                index: bad,
                limit: c,
            });
        }
        let src = self.value(x).data();
        let data = idx.iter().enumerate().map(|(i, &j)| src[i * c + j]).collect();
        let t = Tensor::matrix(r, 1, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Gather(x, idx.to_vec()), rg))
    }

    /// Gradient of the last [`backward`](Self::backward) with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout);
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&mut self, idx: usize, gout: &[f64]) {
        // Borrow juggling: take the op out, put it back afterwards.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let (r, c) = {
            let s = self.nodes[idx].value.shape();
            (s[0], s[1])
        };
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.requires_grad(*a) {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let ga = self.acc(*a).unwrap();
                    matmul_a_bt(gout, &bv, m, n, k, ga);
                }
                if self.requires_grad(*b) {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let gb = self.acc(*b).unwrap();
                    matmul_at_b(&av, gout, m, k, n, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.acc(v) {
                        g.iter_mut().zip(gout).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(g) = self.acc(*x) {
                    g.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
                }
                if let Some(g) = self.acc(*row) {
                    for chunk in gout.chunks(c) {
                        g.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(*a) {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += y);
                }
                if let Some(g) = self.acc(*b) {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if let Some(g) = self.acc(*a) {
                    for i in 0..g.len() {
                        g[i] += gout[i] * bv[i];
                    }
                }
                if let Some(g) = self.acc(*b) {
                    for i in 0..g.len() {
                        g[i] += gout[i] * av[i];
                    }
                }
            }
            Op::Min(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if let Some(g) = self.acc(*a) {
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            g[i] += gout[i];
                        }
                    }
                }
                if let Some(g) = self.acc(*b) {
                    for i in 0..g.len() {
                        if av[i] > bv[i] {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                if let Some(g) = self.acc(*x) {
                    g.iter_mut().zip(gout).for_each(|(a, b)| *a += b * s);
                }
            }
            Op::Exp(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        g[i] += gout[i] * y[i];
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        g[i] += gout[i] / xv[i];
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        g[i] += 2.0 * xv[i] * gout[i];
                    }
                }
            }
            Op::Clip(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.nodes[x.0].value.data().to_vec();
                if let Some(g) = self.acc(*x) {
                    for i in 0..g.len() {
                        if xv[i] > lo && xv[i] < hi {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                // output is r×c, input c×r
                if let Some(g) = self.acc(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            g[j * r + i] += gout[i * c + j];
                        }
                    }
                }
            }
            Op::BroadcastRows(x) => {
                if let Some(g) = self.acc(*x) {
                    for chunk in gout.chunks(c) {
                        g.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::MaxSubtract { x, argmax } => {
                if let Some(g) = self.acc(*x) {
                    for i in 0..r {
                        let row = &gout[i * c..(i + 1) * c];
                        let total: f64 = row.iter().sum();
                        for j in 0..c {
                            g[i * c + j] += row[j];
                        }
                        g[i * c + argmax[i]] -= total;
                    }
                }
            }
            Op::MaskedSoftmax { x, mask, tau } => {
                let y = self.nodes[idx].value.data().to_vec();
                let tau = *tau;
                if let Some(g) = self.acc(*x) {
                    for i in 0..r {
                        let base = i * c;
                        let dot: f64 = (0..c).map(|j| y[base + j] * gout[base + j]).sum();
                        for j in 0..c {
                            if mask[base + j] {
                                g[base + j] += y[base + j] * (gout[base + j] - dot) / tau;
                            }
                        }
                    }
                }
            }
            Op::MaskedLogSoftmax { x, mask, tau } => {
                let y = self.nodes[idx].value.data().to_vec();
                let tau = *tau;
                if let Some(g) = self.acc(*x) {
                    for i in 0..r {
                        let base = i * c;
                        let total: f64 = (0..c).filter(|&j| mask[base + j]).map(|j| gout[base + j]).sum();
                        for j in 0..c {
                            if mask[base + j] {
                                let p = y[base + j].exp();
                                g[base + j] += (gout[base + j] - p * total) / tau;
                            }
                        }
                    }
                }
            }
            Op::ReduceMax { x, argmax } => {
                let cols = self.dims(*x).1;
                if let Some(g) = self.acc(*x) {
                    for (j, &i) in argmax.iter().enumerate() {
                        g[i * cols + j] += gout[j];
                    }
                }
            }
            Op::SumRows(x) => {
                let cols = self.dims(*x).1;
                if let Some(g) = self.acc(*x) {
                    for (i, chunk) in g.chunks_mut(cols).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += gout[i]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.acc(*x) {
                    g.iter_mut().for_each(|v| *v += gout[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(g) = self.acc(*x) {
                    let n = g.len() as f64;
                    g.iter_mut().for_each(|v| *v += gout[0] / n);
                }
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let w = self.dims(x).1;
                    if let Some(g) = self.acc(x) {
                        for i in 0..r {
                            for j in 0..w {
                                g[i * w + j] += gout[i * c + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.nodes[x.0].value.len();
                    if let Some(g) = self.acc(x) {
                        g.iter_mut().zip(&gout[offset..offset + n]).for_each(|(a, b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::Gather(x, idxs) => {
                let cols = self.dims(*x).1;
                if let Some(g) = self.acc(*x) {
                    for (i, &j) in idxs.iter().enumerate() {
                        g[i * cols + j] += gout[i];
                    }
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

fn row_argmax(it: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in it {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    best.expect("non-empty row")
}

fn row_max_masked(row: &[f64], mask: &[bool]) -> Option<f64> {
    row.iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

fn check_mask(r: usize, c: usize, mask: &[bool], tau: f64) -> Result<()> {
    if mask.len() != r * c {
        return Err(Error::Shape {
            op: "masked_softmax",
            lhs: vec![r, c],
            rhs: vec![mask.len()],
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Plain masked, max-shifted row softmax shared by the graph op and the
/// non-differentiable helpers.
pub fn masked_softmax_rows(x: &[f64], mask: &[bool], r: usize, c: usize, tau: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let mrow = &mask[i * c..(i + 1) * c];
        let m = row_max_masked(row, mrow).ok_or(Error::EmptyRow { row: i })?;
        let mut z = 0.0;
        for j in 0..c {
            if mrow[j] {
                let e = ((row[j] - m) / tau).exp();
                out[i * c + j] = e;
                z += e;
            }
        }
        out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}
