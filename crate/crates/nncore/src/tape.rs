//! Define-by-run reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node vector is already a topological order and
//! the backward sweep simply walks it in reverse.

use crate::error::shape_err;
use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::{NnError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMulT(Var, Var),
    RowMatVec(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sin(Var),
    Clamp(Var, f64, f64),
    /// Elementwise extremum over same-shape inputs; `winner[e]` is the input
    /// index that produced element `e`.
    Select { inputs: Vec<Var>, winner: Vec<u32> },
    /// Per-row extremum over columns; `winner[r]` is the chosen column.
    RowSelect { input: Var, winner: Vec<u32> },
    LogSoftmax(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    StopGrad(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    fn dim(x: usize, y: usize) -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    }
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[inline]
fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
}

fn broadcast_apply(
    a: &Matrix,
    b: &Matrix,
    out: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Matrix {
    if a.shape() == b.shape() {
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Matrix::from_vec(out.0, out.1, data);
    }
    let (sa, sb) = (a.shape(), b.shape());
    let (da, db) = (a.as_slice(), b.as_slice());
    let mut data = Vec::with_capacity(out.0 * out.1);
    for r in 0..out.0 {
        for c in 0..out.1 {
            data.push(f(da[bidx(sa, r, c)], db[bidx(sb, r, c)]));
        }
    }
    Matrix::from_vec(out.0, out.1, data)
}

/// Sums `g` (output-shaped) down to `shape` along broadcast dimensions.
fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    let (rows, cols) = g.shape();
    let o = out.as_mut_slice();
    let gs = g.as_slice();
    for r in 0..rows {
        for c in 0..cols {
            o[bidx(shape, r, c)] += gs[r * cols + c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Places a parameter on the tape. Repeated calls for the same id return
    /// the same node so its adjoint is accumulated once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_nodes.get(id.0) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let value = broadcast_apply(self.value(a), self.value(b), out, f);
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, crate::functions::logistic, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `x · wᵀ` for `x: n x k`, `w: m x k`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.1 {
            return Err(shape_err(
                "matmul_t",
                format!("input has {} columns but weights expect {}", xs.1, ws.1),
            ));
        }
        let value = self.value(x).matmul_t(self.value(w));
        Ok(self.push(value, Op::MatMulT(x, w)))
    }

    /// Per-row matrix-vector product with per-row weights.
    ///
    /// `weights` is `n x (out * k)` holding one row-major `out x k` matrix per
    /// sample, `x` is `n x k`; the result is `n x out`.
    pub fn row_matvec(&mut self, weights: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (self.shape(weights), self.shape(x));
        if ws.0 != xs.0 || xs.1 == 0 || ws.1 % xs.1 != 0 {
            return Err(shape_err(
                "row_matvec",
                format!("weights {ws:?} incompatible with input {xs:?}"),
            ));
        }
        let (n, k) = xs;
        let out = ws.1 / k;
        let w = self.value(weights);
        let xv = self.value(x);
        let mut data = vec![0.0; n * out];
        for r in 0..n {
            let wr = w.row_slice(r);
            let xr = xv.row_slice(r);
            for o in 0..out {
                data[r * out + o] = crate::matrix::dot(&wr[o * k..(o + 1) * k], xr);
            }
        }
        Ok(self.push(Matrix::from_vec(n, out, data), Op::RowMatVec(weights, x)))
    }

    fn select(&mut self, name: &'static str, inputs: &[Var], pick_min: bool) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| NnError::Usage(format!("{name} needs at least one input")))?;
        let shape = self.shape(first);
        for &v in inputs {
            if self.shape(v) != shape {
                return Err(shape_err(
                    name,
                    format!("{:?} vs {:?}", self.shape(v), shape),
                ));
            }
        }
        let mut value = self.value(first).clone();
        let mut winner = vec![0u32; value.len()];
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            let src = self.nodes[v.0].value.as_slice();
            for (e, (cur, &cand)) in value.as_mut_slice().iter_mut().zip(src).enumerate() {
                // strict comparison keeps the lowest-indexed input on ties
                let better = if pick_min { cand < *cur } else { cand > *cur };
                if better {
                    *cur = cand;
                    winner[e] = k as u32;
                }
            }
        }
        Ok(self.push(
            value,
            Op::Select {
                inputs: inputs.to_vec(),
                winner,
            },
        ))
    }

    /// Elementwise minimum across same-shape nodes. The adjoint flows only to
    /// the selected input; ties go to the lowest index.
    pub fn min_n(&mut self, inputs: &[Var]) -> Result<Var> {
        self.select("min_n", inputs, true)
    }

    /// Elementwise maximum across same-shape nodes; see [`Tape::min_n`].
    pub fn max_n(&mut self, inputs: &[Var]) -> Result<Var> {
        self.select("max_n", inputs, false)
    }

    fn row_select(&mut self, a: Var, pick_min: bool) -> Result<Var> {
        let m = self.value(a);
        if m.cols() == 0 {
            return Err(NnError::Usage("row extremum of zero columns".into()));
        }
        let mut data = Vec::with_capacity(m.rows());
        let mut winner = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            let row = m.row_slice(r);
            let mut best = 0usize;
            for (c, &x) in row.iter().enumerate().skip(1) {
                let better = if pick_min { x < row[best] } else { x > row[best] };
                if better {
                    best = c;
                }
            }
            data.push(row[best]);
            winner.push(best as u32);
        }
        let value = Matrix::from_vec(m.rows(), 1, data);
        Ok(self.push(value, Op::RowSelect { input: a, winner }))
    }

    /// Per-row minimum over columns, `n x k -> n x 1`.
    pub fn row_min(&mut self, a: Var) -> Result<Var> {
        self.row_select(a, true)
    }

    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        self.row_select(a, false)
    }

    /// Numerically stable per-row log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..m.rows() {
            let row = &mut out.as_mut_slice()[r * m.cols()..(r + 1) * m.cols()];
            let lse = crate::functions::log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Per-row sum, `n x k -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|r| m.row_slice(r).iter().sum()).collect();
        let value = Matrix::from_vec(m.rows(), 1, data);
        self.push(value, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let s = m.sum() / m.len().max(1) as f64;
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&v) => self.shape(v).0,
            None => return Err(NnError::Usage("concat of nothing".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat", format!("row counts {} vs {}", s.0, rows)));
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(Matrix::from_vec(rows, cols, data), Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("range {start}..{} exceeds {cols} columns", start + len),
            ));
        }
        let m = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&m.row_slice(r)[start..start + len]);
        }
        Ok(self.push(Matrix::from_vec(rows, len, data), Op::Slice(a, start)))
    }

    /// Picks column `indices[r]` from row `r`, `n x k -> n x 1`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if indices.len() != rows || indices.iter().any(|&i| i >= cols) {
            return Err(shape_err(
                "gather",
                format!("{} indices for {rows}x{cols}", indices.len()),
            ));
        }
        let m = self.value(a);
        let data = indices.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect();
        Ok(self.push(
            Matrix::from_vec(rows, 1, data),
            Op::Gather(a, indices.to_vec()),
        ))
    }

    /// Value-preserving gradient block: the returned node passes no adjoint
    /// back to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad(a))
    }

    /// Source of a gradient-blocked node, or `None` if `v` is not blocked.
    pub fn blocked_source(&self, v: Var) -> Option<Var> {
        match self.nodes[v.0].op {
            Op::StopGrad(src) => Some(src),
            _ => None,
        }
    }

    /// `x · wᵀ + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add(y, b)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));
        let mut visited = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].clone() else { continue };
            visited.push(i);
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Matrix| {
                let slot = &mut adj[v.0];
                match slot {
                    Some(existing) => existing.add_assign(&d),
                    None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf | Op::Param(_) | Op::StopGrad(_) => {}
                Op::Add(a, b) => {
                    send(*a, reduce_to(g.clone(), self.shape(*a)));
                    send(*b, reduce_to(g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    send(*b, reduce_to(g.map(|x| -x), self.shape(*b)));
                    send(*a, reduce_to(g, self.shape(*a)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let out = g.shape();
                    let ga = broadcast_apply(&g, vb, out, |gg, y| gg * y);
                    let gb = broadcast_apply(&g, va, out, |gg, x| gg * x);
                    send(*a, reduce_to(ga, va.shape()));
                    send(*b, reduce_to(gb, vb.shape()));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let out = g.shape();
                    let ga = broadcast_apply(&g, vb, out, |gg, y| gg / y);
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let q = broadcast_apply(&node.value, vb, out, |o, y| -o / y);
                    let gb = broadcast_apply(&g, &q, out, |gg, qq| gg * qq);
                    send(*a, reduce_to(ga, va.shape()));
                    send(*b, reduce_to(gb, vb.shape()));
                }
                Op::Neg(a) => send(*a, g.map(|x| -x)),
                Op::Scale(a, k) => {
                    let k = *k;
                    send(*a, g.map(|x| x * k));
                }
                Op::Offset(a) => send(*a, g),
                Op::MatMulT(x, w) => {
                    let gx = g.matmul(self.value(*w));
                    let gw = g.t_matmul(self.value(*x));
                    send(*x, gx);
                    send(*w, gw);
                }
                Op::RowMatVec(w, x) => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let (n, k) = xv.shape();
                    let out = g.cols();
                    let mut gw = Matrix::zeros(n, out * k);
                    let mut gx = Matrix::zeros(n, k);
                    for r in 0..n {
                        let xr = xv.row_slice(r);
                        let wr = wv.row_slice(r);
                        for o in 0..out {
                            let go = g.get(r, o);
                            if go == 0.0 {
                                continue;
                            }
                            let base = o * k;
                            let gwr = &mut gw.as_mut_slice()[r * out * k + base..r * out * k + base + k];
                            for (acc, &xi) in gwr.iter_mut().zip(xr) {
                                *acc += go * xi;
                            }
                            let gxr = &mut gx.as_mut_slice()[r * k..(r + 1) * k];
                            for (acc, &wi) in gxr.iter_mut().zip(&wr[base..base + k]) {
                                *acc += go * wi;
                            }
                        }
                    }
                    send(*w, gw);
                    send(*x, gx);
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gg, y| gg * (1.0 - y * y));
                    send(*a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |gg, y| gg * y * (1.0 - y));
                    send(*a, d);
                }
                Op::Relu(a) => {
                    let d = zip_map(&g, self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                    send(*a, d);
                }
                Op::Exp(a) => {
                    let d = zip_map(&g, &node.value, |gg, y| gg * y);
                    send(*a, d);
                }
                Op::Ln(a) => {
                    let d = zip_map(&g, self.value(*a), |gg, x| gg / x);
                    send(*a, d);
                }
                Op::Square(a) => {
                    let d = zip_map(&g, self.value(*a), |gg, x| 2.0 * gg * x);
                    send(*a, d);
                }
                Op::Sin(a) => {
                    let d = zip_map(&g, self.value(*a), |gg, x| gg * x.cos());
                    send(*a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let d = zip_map(&g, self.value(*a), |gg, x| {
                        if x >= lo && x <= hi {
                            gg
                        } else {
                            0.0
                        }
                    });
                    send(*a, d);
                }
                Op::Select { inputs, winner } => {
                    let shape = g.shape();
                    let mut parts: Vec<Option<Matrix>> = vec![None; inputs.len()];
                    for (e, (&w, &gg)) in winner.iter().zip(g.as_slice()).enumerate() {
                        let part = parts[w as usize]
                            .get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                        part.as_mut_slice()[e] += gg;
                    }
                    for (k, part) in parts.into_iter().enumerate() {
                        if let Some(p) = part {
                            send(inputs[k], p);
                        }
                    }
                }
                Op::RowSelect { input, winner } => {
                    let (rows, cols) = self.shape(*input);
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &w) in winner.iter().enumerate() {
                        d.set(r, w as usize, g.get(r, 0));
                    }
                    send(*input, d);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let mut d = g.clone();
                    for r in 0..rows {
                        let gs: f64 = g.row_slice(r).iter().sum();
                        for c in 0..cols {
                            let v = d.get(r, c) - y.get(r, c).exp() * gs;
                            d.set(r, c, v);
                        }
                    }
                    send(*a, d);
                }
                Op::RowSum(a) => {
                    let (rows, cols) = self.shape(*a);
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gg = g.get(r, 0);
                        for c in 0..cols {
                            d.set(r, c, gg);
                        }
                    }
                    send(*a, d);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    send(*a, Matrix::filled(rows, cols, g.item()));
                }
                Op::Mean(a) => {
                    let (rows, cols) = self.shape(*a);
                    let n = (rows * cols).max(1) as f64;
                    send(*a, Matrix::filled(rows, cols, g.item() / n));
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let mut d = Matrix::zeros(rows, pc);
                        for r in 0..rows {
                            d.as_mut_slice()[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        send(p, d);
                    }
                }
                Op::Slice(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let len = g.cols();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.as_mut_slice()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(g.row_slice(r));
                    }
                    send(*a, d);
                }
                Op::Gather(a, idx) => {
                    let (rows, cols) = self.shape(*a);
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &c) in idx.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                    send(*a, d);
                }
            }
        }
        Ok(Gradients { adj, visited })
    }

    /// Runs [`Tape::backward`] and accumulates parameter adjoints into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(grads.adj.len()) {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.adj[i]) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(grads)
    }
}

fn zip_map(g: &Matrix, x: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Matrix::from_vec(g.rows(), g.cols(), data)
}

/// Adjoints produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.adj.get(v.0).and_then(|g| g.as_ref())
    }

    /// Node indices in the order the sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
