//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every forward pass records its operations on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and
//! accumulates adjoints into every node that depends on a parameter.
//!
//! ```
//! use tgx_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap());
//! let y = tape.tanh(w);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert!((grads.get(w).data()[0] - (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
//! ```

use std::rc::Rc;

use crate::error::{Error, Result};

/// Row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::shape(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `a (m x k) * b (k x n)`.
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `a (m x k) * b^T` with `b` stored as `n x k`.
fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `a^T * b` with `a` stored as `k x m` and `b` as `k x n`.
fn mm_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
    c
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Constant sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                t.data[r * self.cols + self.indices[k]] += self.values[k];
            }
        }
        t
    }

    /// `self * b` with `b` dense `cols x n`.
    fn mul_dense(&self, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let crow = &mut c[r * n..(r + 1) * n];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[k];
                let brow = &b[self.indices[k] * n..(self.indices[k] + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += v * bv;
                }
            }
        }
        c
    }

    /// `self^T * g` with `g` dense `rows x n`.
    fn tmul_dense(&self, g: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let grow = &g[r * n..(r + 1) * n];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[k];
                let col = self.indices[k];
                let crow = &mut c[col * n..(col + 1) * n];
                for (cv, gv) in crow.iter_mut().zip(grow) {
                    *cv += v * gv;
                }
            }
        }
        c
    }
}

/// Handle to a node recorded on a [`Tape`].
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
    MatMul(usize, usize),
    SparseMatMul(Rc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Softplus(usize),
    Sum(usize),
    SumRows(usize),
    ConcatCols(Vec<usize>),
    Transpose(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass. Not shareable across threads; build one tape per
/// independent computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the output.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a.0, b.0), rg))
    }

    /// Product with a constant sparse left operand.
    pub fn sparse_matmul(&mut self, a: &Rc<SparseMatrix>, b: Var) -> Result<Var> {
        let (k, n) = self.value(b).dims2("sparse_matmul")?;
        if a.cols != k {
            return Err(Error::shape(
                "sparse_matmul",
                format!("{}x{} * {k}x{n}", a.rows, a.cols),
            ));
        }
        let data = a.mul_dense(self.value(b).data(), n);
        let rg = self.rg(b.0);
        Ok(self.push(
            Tensor {
                shape: vec![a.rows, n],
                data,
            },
            Op::SparseMatMul(Rc::clone(a), b.0),
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape, self.value(b).shape),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape.clone();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor { shape, data }, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a.0);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a.0, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    /// Natural logarithm; non-positive inputs yield non-finite values.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    /// Column sums of a matrix: `m x n -> 1 x n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("sum_rows")?;
        let src = &self.value(a).data;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (acc, v) in data.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *acc += v;
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(Tensor { shape: vec![1, n], data }, Op::SumRows(a.0), rg))
    }

    /// Concatenation of matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (m, _) = self.value(*first).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            if r != m {
                return Err(Error::shape("concat", format!("row counts {m} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.value(p).data;
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(
            Tensor {
                shape: vec![m, total],
                data,
            },
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let src = &self.value(a).data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a.0), rg))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let out = self.value(root);
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                out.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(&out.shape, 1.0));

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let nodes = &self.nodes;
            let want = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let va = &nodes[*a].value;
                    let vb = &nodes[*b].value;
                    let (m, k) = (va.shape[0], va.shape[1]);
                    let n = vb.shape[1];
                    if want(*a) {
                        let ga = mm_bt(&g.data, &vb.data, m, n, k);
                        accumulate(&mut grads[*a], Tensor { shape: vec![m, k], data: ga });
                    }
                    if want(*b) {
                        let gb = mm_at(&va.data, &g.data, m, k, n);
                        accumulate(&mut grads[*b], Tensor { shape: vec![k, n], data: gb });
                    }
                }
                Op::SparseMatMul(sp, b) => {
                    if want(*b) {
                        let n = g.shape[1];
                        let gb = sp.tmul_dense(&g.data, n);
                        accumulate(&mut grads[*b], Tensor { shape: vec![sp.cols, n], data: gb });
                    }
                }
                Op::Add(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if want(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if want(*b) {
                        accumulate(&mut grads[*b], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    let va = &nodes[*a].value;
                    let vb = &nodes[*b].value;
                    if want(*a) {
                        let data = g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[*a], Tensor { shape: g.shape.clone(), data });
                    }
                    if want(*b) {
                        let data = g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[*b], Tensor { shape: g.shape.clone(), data });
                    }
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads[*a], g.map(|x| s * x));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads[*a], Tensor { shape: g.shape.clone(), data });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads[*a], Tensor { shape: g.shape.clone(), data });
                }
                Op::Log(a) => {
                    let x = &nodes[*a].value;
                    let data = g.data.iter().zip(&x.data).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads[*a], Tensor { shape: g.shape.clone(), data });
                }
                Op::Softplus(a) => {
                    let x = &nodes[*a].value;
                    let data = g.data.iter().zip(&x.data).map(|(g, &x)| g * sigmoid(x)).collect();
                    accumulate(&mut grads[*a], Tensor { shape: g.shape.clone(), data });
                }
                Op::Sum(a) => {
                    let shape = nodes[*a].value.shape.clone();
                    accumulate(&mut grads[*a], Tensor::filled(&shape, g.data[0]));
                }
                Op::SumRows(a) => {
                    let (m, n) = (nodes[*a].value.shape[0], nodes[*a].value.shape[1]);
                    let mut data = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        data.extend_from_slice(&g.data);
                    }
                    accumulate(&mut grads[*a], Tensor { shape: vec![m, n], data });
                }
                Op::ConcatCols(parts) => {
                    let m = g.shape[0];
                    let total = g.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p].value.shape[1];
                        if want(p) {
                            let mut data = Vec::with_capacity(m * w);
                            for i in 0..m {
                                data.extend_from_slice(&g.data[i * total + offset..i * total + offset + w]);
                            }
                            accumulate(&mut grads[p], Tensor { shape: vec![m, w], data });
                        }
                        offset += w;
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (g.shape[0], g.shape[1]);
                    let mut data = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            data[j * m + i] = g.data[i * n + j];
                        }
                    }
                    accumulate(&mut grads[*a], Tensor { shape: vec![n, m], data });
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Magnitudes below this are compared in absolute terms.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Checks `f`'s analytic gradient against central finite differences with
/// the given step. The relative error of one entry is
/// `|a - n| / max(|a|, |n|, GRADIENT_CHECK_FLOOR)`.
pub fn gradient_check<F>(params: &[Tensor], step: f64, f: F) -> Result<GradientCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data[ei];
            work[pi].data[ei] = orig + step;
            let up = eval(&work)?;
            work[pi].data[ei] = orig - step;
            let down = eval(&work)?;
            work[pi].data[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data[ei];
            let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Tensor]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first[i], &self.second[i])
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape != g.shape || p.shape != m.shape {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {:?}, grad {:?}", p.shape, g.shape),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
