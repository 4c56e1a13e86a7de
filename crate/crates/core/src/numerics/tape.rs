//! Reverse-mode differentiation over a Wengert list.
//!
//! Every operation appends a node holding its forward value; nodes are only
//! ever appended, so index order is a valid topological order and the
//! backward sweep simply walks the list in reverse.

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Norm at or below which `l2_normalize` returns the zero vector.
pub const NORM_EPS: f64 = 1e-9;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    L2Normalize(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.grads.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    /// Adds `other` into `self` key by key.
    pub fn accumulate(&mut self, other: &GradMap) -> Result<()> {
        for (name, g) in other.iter() {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(Error::Shape {
                            op: "grad_accumulate",
                            lhs: acc.shape().to_vec(),
                            rhs: g.shape().to_vec(),
                        });
                    }
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// A single-threaded computation tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `c = a·b + beta·c` with arbitrary strides on the inputs, row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m×k) and `b` (k×n),
    // and `c` is a distinct, contiguous m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Unnamed input; participates in gradients only if `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(Op::Leaf, t, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t.with_grad(false), false)
    }

    /// Named parameter leaf. Gradients are reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(Op::Param(name.into()), t.clone(), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (ta.dims2(), tb.dims2());
        if ta.shape().len() != 2 || tb.shape().len() != 2 || k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(shape_err("transpose", t, t));
        }
        let (r, c) = t.dims2();
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Transpose(a), Tensor::matrix(c, r, out)?, rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(op, t, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("elementwise_mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + b` with the 1×c row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (r, c) = tx.dims2();
        if tx.shape().len() != 2 || tb.numel() != c {
            return Err(shape_err("add_row", tx, tb));
        }
        let bias = tb.data();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(Op::AddRow(x, b), Tensor::matrix(r, c, out)?, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, s), t, rg)
    }

    /// Concatenation along the last (column) dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat of zero tensors"));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(shape_err("concat", self.value(first), t));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Op::Concat(parts.to_vec()),
            Tensor::matrix(rows, cols, out)?,
            rg,
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_rows of zero tensors"));
        };
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::matrix(rows, cols, out)?,
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::SliceCols(a, start), Tensor::matrix(r, len, out)?, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::SliceRows(a, start), Tensor::matrix(len, c, out)?, rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(op, t, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(Op::Softmax(a), t, rg)
    }

    /// Column means: r×c → 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if r == 0 {
            return Err(Error::invalid("mean_rows of a matrix with no rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::MeanRows(a), Tensor::row(out), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Op::MeanAll(a), Tensor::scalar(s), rg)
    }

    /// Scales every row to unit Euclidean norm. Rows with norm ≤ [`NORM_EPS`]
    /// become zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= NORM_EPS {
                log::debug!("l2_normalize: near-zero row (norm {norm:e}) mapped to zero");
                row.iter_mut().for_each(|x| *x = 0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(Op::L2Normalize(a), t, rg)
    }

    /// Gradients of a scalar `loss` with respect to every reachable named
    /// parameter that requires them.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut map = GradMap::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(map);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    let t = Tensor::new(y.shape().to_vec(), g)?;
                    let mut single = GradMap::new();
                    single.insert(name.clone(), t);
                    map.accumulate(&single)?;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((m, k), (_, n)) = (ta.dims2(), tb.dims2());
                    if self.requires_grad(*a) {
                        let ga = self.slot(&mut grads, *a);
                        // dA += G·Bᵀ
                        gemm(
                            m,
                            n,
                            k,
                            &g,
                            (n as isize, 1),
                            tb.data(),
                            (1, n as isize),
                            1.0,
                            ga,
                        );
                    }
                    if self.requires_grad(*b) {
                        let gb = self.slot(&mut grads, *b);
                        // dB += Aᵀ·G
                        gemm(
                            k,
                            m,
                            n,
                            ta.data(),
                            (1, k as isize),
                            &g,
                            (n as isize, 1),
                            1.0,
                            gb,
                        );
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2();
                    let ga = self.slot(&mut grads, *a);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g, 1.0));
                    self.acc(&mut grads, *b, |gb| add_into(gb, &g, 1.0));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g, 1.0));
                    self.acc(&mut grads, *b, |gb| add_into(gb, &g, -1.0));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |ga| {
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(tb.data()) {
                            *o += gi * bi;
                        }
                    });
                    self.acc(&mut grads, *b, |gb| {
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(ta.data()) {
                            *o += gi * ai;
                        }
                    });
                }
                Op::AddRow(x, b) => {
                    let c = self.value(*x).cols().max(1);
                    self.acc(&mut grads, *x, |gx| add_into(gx, &g, 1.0));
                    self.acc(&mut grads, *b, |gb| {
                        for row in g.chunks(c) {
                            add_into(gb, row, 1.0);
                        }
                    });
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g, s));
                }
                Op::Concat(parts) => {
                    let cols = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        self.acc(&mut grads, p, |gp| {
                            for (i, row) in gp.chunks_mut(pc.max(1)).enumerate() {
                                let src = &g[i * cols + offset..i * cols + offset + pc];
                                add_into(row, src, 1.0);
                            }
                        });
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        self.acc(&mut grads, p, |gp| {
                            add_into(gp, &g[offset..offset + n], 1.0)
                        });
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let c = self.value(*a).cols();
                    let len = y.cols();
                    let start = *start;
                    self.acc(&mut grads, *a, |ga| {
                        for (i, row) in g.chunks(len.max(1)).enumerate() {
                            add_into(&mut ga[i * c + start..i * c + start + len], row, 1.0);
                        }
                    });
                }
                Op::SliceRows(a, start) => {
                    let c = self.value(*a).cols();
                    let off = start * c;
                    self.acc(&mut grads, *a, |ga| {
                        add_into(&mut ga[off..off + g.len()], &g, 1.0)
                    });
                }
                Op::Softmax(a) => {
                    let c = y.cols().max(1);
                    self.acc(&mut grads, *a, |ga| {
                        for ((gr, yr), out) in
                            g.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                                *o += yi * (gi - dot);
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => self.acc(&mut grads, *a, |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }),
                Op::Tanh(a) => self.acc(&mut grads, *a, |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }),
                Op::Relu(a) => self.acc(&mut grads, *a, |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(&g).zip(y.data()) {
                        if *yi > 0.0 {
                            *o += gi;
                        }
                    }
                }),
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    self.acc(&mut grads, *a, |ga| {
                        for ((o, gi), xi) in ga.iter_mut().zip(&g).zip(x.data()) {
                            *o += gi * sigmoid(*xi);
                        }
                    });
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).dims2();
                    let inv = 1.0 / r as f64;
                    self.acc(&mut grads, *a, |ga| {
                        for row in ga.chunks_mut(c.max(1)) {
                            add_into(row, &g, inv);
                        }
                    });
                }
                Op::SumAll(a) => {
                    let g0 = g[0];
                    self.acc(&mut grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g0));
                }
                Op::MeanAll(a) => {
                    let n = self.value(*a).numel() as f64;
                    let g0 = g[0] / n;
                    self.acc(&mut grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g0));
                }
                Op::L2Normalize(a) => {
                    let x = self.value(*a);
                    let c = x.cols().max(1);
                    self.acc(&mut grads, *a, |ga| {
                        for (((out, gr), yr), xr) in ga
                            .chunks_mut(c)
                            .zip(g.chunks(c))
                            .zip(y.data().chunks(c))
                            .zip(x.data().chunks(c))
                        {
                            let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                            if norm <= NORM_EPS {
                                continue;
                            }
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                                *o += (gi - yi * dot) / norm;
                            }
                        }
                    });
                }
            }
        }
        Ok(map)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.nodes[v.0].requires_grad {
            f(self.slot(grads, v));
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}
