//! Dense `f64` tensors with a tape-based reverse-mode autodiff.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! are methods on the tape that take [`Var`] handles and append a node; the
//! tape is therefore a topological order by construction and
//! [`Tape::backward`] walks it once, back to front.
//!
//! ```
//! use czsl::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
//! let y = tape.sum(x);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
//! ```
//!
//! Only the broadcasting the model actually needs is supported: a bias row
//! added to every row ([`Tape::add_row`]) and a per-row scalar column
//! multiplied into every row ([`Tape::mul_col`]).

use crate::error::{Error, Result};

/// Norm floor for cosine and normalization; keeps zero rows finite.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Rows of a tensor viewed as `[len / last_dim, last_dim]`.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.last_dim().max(1))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Sub,
    Mul,
    MulCol,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sum,
    SumAxis,
    Softmax,
    LogSoftmax,
    NormalizeRows,
    Cosine,
    Conv1d,
    Gather,
    Reshape,
    Concat,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    SumAxis { a: usize, outer: usize, n: usize, inner: usize },
    Softmax(usize),
    LogSoftmax(usize),
    NormalizeRows { a: usize, norms: Vec<f64> },
    Cosine { a: usize, b: usize, norms_a: Vec<f64>, norms_b: Vec<f64> },
    Conv1d { x: usize, w: usize, bias: usize },
    Gather { a: usize, index: Vec<usize> },
    Reshape(usize),
    Concat { parts: Vec<usize>, outer: usize, inner_sizes: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MulCol(..) => OpKind::MulCol,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Sum(..) => OpKind::Sum,
            Op::SumAxis { .. } => OpKind::SumAxis,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::NormalizeRows { .. } => OpKind::NormalizeRows,
            Op::Cosine { .. } => OpKind::Cosine,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Concat { .. } => OpKind::Concat,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Reshape(a) => vec![*a],
            Op::SumAxis { a, .. } | Op::NormalizeRows { a, .. } | Op::Gather { a, .. } => vec![*a],
            Op::Cosine { a, b, .. } => vec![*a, *b],
            Op::Conv1d { x, w, bias } => vec![*x, *w, *bias],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Read-only view of one recorded node.
#[derive(Debug, Clone)]
pub struct TapeNode {
    pub op_kind: OpKind,
    pub input_ids: Vec<usize>,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn node(&self, v: Var) -> TapeNode {
        let op = &self.nodes[v.0].op;
        TapeNode {
            op_kind: op.kind(),
            input_ids: op.inputs(),
        }
    }

    /// Records a value that does not need a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node, or a plain constant when no input needs a gradient.
    fn record(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(value, op, requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    // ----- forward primitives -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.val(a).data(), self.val(b).data(), &mut out, m, k, n);
        Ok(self.record(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let data = zip_map(self.val(a), self.val(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(Tensor { shape, data }, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let data = zip_map(self.val(a), self.val(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(Tensor { shape, data }, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let data = zip_map(self.val(a), self.val(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.record(Tensor { shape, data }, Op::Mul(a.0, b.0)))
    }

    /// Adds the vector `row` (length = last dim of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.val(a).last_dim();
        if self.val(row).len() != n || self.val(a).rank() == 0 {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.val(row).data();
        let mut data = self.val(a).data.clone();
        for chunk in data.chunks_exact_mut(n) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.record(Tensor { shape, data }, Op::AddRow(a.0, row.0)))
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let ta = self.val(a);
        let n = ta.last_dim();
        let rows = ta.len().checked_div(n).unwrap_or(0);
        if self.val(col).len() != rows || ta.rank() == 0 {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                lhs: ta.shape.clone(),
                rhs: self.shape(col).to_vec(),
            });
        }
        let c = self.val(col).data();
        let mut data = ta.data.clone();
        for (chunk, &s) in data.chunks_exact_mut(n).zip(c) {
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        let shape = ta.shape.clone();
        Ok(self.record(Tensor { shape, data }, Op::MulCol(a.0, col.0)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = map(self.val(a), |x| x * factor);
        self.record(t, Op::Scale(a.0, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.val(a), |x| x + c);
        self.record(t, Op::AddScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.val(a), |x| x.max(0.0));
        self.record(t, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.val(a), sigmoid);
        self.record(t, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = map(self.val(a), f64::exp);
        self.record(t, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = map(self.val(a), f64::ln);
        self.record(t, Op::Log(a.0))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data.iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Mean of all entries as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("sum_axis: axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.val(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.record(
            Tensor { shape: out_shape, data: out },
            Op::SumAxis { a: a.0, outer, n, inner },
        ))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::invalid(format!("mean_axis: axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n.max(1) as f64))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let mut data = t.data.clone();
        for row in data.chunks_exact_mut(t.last_dim().max(1)) {
            softmax_in_place(row);
        }
        let shape = t.shape.clone();
        self.record(Tensor { shape, data }, Op::Softmax(a.0))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let mut data = t.data.clone();
        for row in data.chunks_exact_mut(t.last_dim().max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let shape = t.shape.clone();
        self.record(Tensor { shape, data }, Op::LogSoftmax(a.0))
    }

    /// L2-normalizes every row along the last axis.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let n = t.last_dim().max(1);
        let mut data = t.data.clone();
        let mut norms = Vec::with_capacity(data.len() / n);
        for row in data.chunks_exact_mut(n) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        let shape = t.shape.clone();
        self.record(Tensor { shape, data }, Op::NormalizeRows { a: a.0, norms })
    }

    /// Cosine similarity along the last axis. Two vectors give a scalar;
    /// `[m, n]` inputs give `[m]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("cosine", a, b)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let n = ta.last_dim().max(1);
        let mut out = Vec::new();
        let mut norms_a = Vec::new();
        let mut norms_b = Vec::new();
        for (ra, rb) in ta.data.chunks_exact(n).zip(tb.data.chunks_exact(n)) {
            let na = dot(ra, ra).sqrt().max(NORM_EPS);
            let nb = dot(rb, rb).sqrt().max(NORM_EPS);
            out.push(dot(ra, rb) / (na * nb));
            norms_a.push(na);
            norms_b.push(nb);
        }
        let mut shape = ta.shape.clone();
        shape.pop();
        Ok(self.record(
            Tensor { shape, data: out },
            Op::Cosine { a: a.0, b: b.0, norms_a, norms_b },
        ))
    }

    /// Temporal convolution with zero 'same' padding.
    ///
    /// `x` is `[B, T, Din]`, `w` is `[K, Din, Dout]` with odd `K`, `bias` is
    /// `[Dout]`; the result is `[B, T, Dout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sw[0] % 2 == 0 {
            return Err(Error::ShapeMismatch { op: "conv1d", lhs: sx, rhs: sw });
        }
        let (b, t, din) = (sx[0], sx[1], sx[2]);
        let (k, dout) = (sw[0], sw[2]);
        if self.val(bias).len() != dout {
            return Err(Error::ShapeMismatch {
                op: "conv1d(bias)",
                lhs: sw,
                rhs: self.shape(bias).to_vec(),
            });
        }
        let half = (k / 2) as isize;
        let (xd, wd, bd) = (self.val(x).data(), self.val(w).data(), self.val(bias).data());
        let mut out = vec![0.0; b * t * dout];
        for bi in 0..b {
            for ti in 0..t {
                let dst = &mut out[(bi * t + ti) * dout..(bi * t + ti + 1) * dout];
                dst.copy_from_slice(bd);
                for ki in 0..k {
                    let src_t = ti as isize + ki as isize - half;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    let xrow = &xd[(bi * t + src_t as usize) * din..][..din];
                    let wk = &wd[ki * din * dout..(ki + 1) * din * dout];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        axpy(xv, &wk[ci * dout..(ci + 1) * dout], dst);
                    }
                }
            }
        }
        Ok(self.record(
            Tensor { shape: vec![b, t, dout], data: out },
            Op::Conv1d { x: x.0, w: w.0, bias: bias.0 },
        ))
    }

    /// General flat gather: `out[i] = a[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let src = self.val(a).data();
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::invalid(format!(
                "gather: {} indices for shape {shape:?}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::invalid(format!("gather: index {bad} out of range {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        Ok(self.record(Tensor { shape, data }, Op::Gather { a: a.0, index }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.val(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: shape,
            });
        }
        let value = Tensor { shape, data: t.data.clone() };
        Ok(self.record(value, Op::Reshape(a.0)))
    }

    /// Selects slices along axis 0.
    pub fn index_select(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some((&n0, rest)) = shape.split_first() else {
            return Err(Error::invalid("index_select on a scalar"));
        };
        let width: usize = rest.iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n0) {
            return Err(Error::invalid(format!("index_select: row {bad} out of range {n0}")));
        }
        let index = rows
            .iter()
            .flat_map(|&r| r * width..(r + 1) * width)
            .collect();
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        self.gather(a, index, out_shape)
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (b, m, n) = match shape[..] {
            [m, n] => (1, m, n),
            [b, m, n] => (b, m, n),
            _ => return Err(Error::invalid(format!("transpose needs rank 2 or 3, got {shape:?}"))),
        };
        let mut index = Vec::with_capacity(b * m * n);
        for bi in 0..b {
            for j in 0..n {
                for i in 0..m {
                    index.push((bi * m + i) * n + j);
                }
            }
        }
        let mut out = shape.clone();
        let r = out.len();
        out.swap(r - 1, r - 2);
        self.gather(a, index, out)
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat: axis {axis} out of range")));
        }
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner_sizes: Vec<usize> = parts
            .iter()
            .map(|p| self.shape(*p)[axis..].iter().product())
            .collect();
        let mut data = Vec::with_capacity(outer * inner_sizes.iter().sum::<usize>());
        for o in 0..outer {
            for (p, &sz) in parts.iter().zip(&inner_sizes) {
                data.extend_from_slice(&self.val(*p).data[o * sz..(o + 1) * sz]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = parts.iter().map(|p| self.shape(*p)[axis]).sum();
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.record(Tensor { shape, data }, Op::Concat { parts: ids, outer, inner_sizes }))
    }

    /// Reverses the time axis of `[T, D]` or `[B, T, D]`.
    pub fn reverse_time(&mut self, a: Var) -> Result<Var> {
        let (b, t, _) = self.time_layout(a)?;
        let perms = vec![(0..t).rev().collect::<Vec<_>>(); b];
        self.permute_time(a, &perms)
    }

    /// Reorders frames: output frame `k` of clip `i` is input frame `perms[i][k]`.
    pub fn permute_time(&mut self, a: Var, perms: &[Vec<usize>]) -> Result<Var> {
        let (b, t, d) = self.time_layout(a)?;
        if perms.len() != b || perms.iter().any(|p| !is_permutation(p, t)) {
            return Err(Error::invalid(format!(
                "permute_time: need {b} permutations of 0..{t}"
            )));
        }
        let mut index = Vec::with_capacity(b * t * d);
        for (bi, perm) in perms.iter().enumerate() {
            for &src in perm {
                let start = (bi * t + src) * d;
                index.extend(start..start + d);
            }
        }
        let shape = self.shape(a).to_vec();
        self.gather(a, index, shape)
    }

    fn time_layout(&self, a: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(a) {
            [t, d] => Ok((1, t, d)),
            [b, t, d] => Ok((b, t, d)),
            ref s => Err(Error::invalid(format!("expected [T, D] or [B, T, D], got {s:?}"))),
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ----- backward -----

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// multiple uses and are available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.val(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                self.grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g);
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn accumulate(&mut self, i: usize, contrib: Vec<f64>) {
        match &mut self.grads[i] {
            Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a].value.shape.clone(), self.nodes[b].value.shape.clone());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, &self.nodes[b].value.data, &mut da, m, n, k);
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(&self.nodes[a].value.data, g, &mut db, m, k, n);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(b) {
                    self.accumulate(b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(b) {
                    self.accumulate(b, g.iter().map(|x| -x).collect());
                }
            }
            Op::AddRow(a, r) => {
                if self.wants(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.wants(r) {
                    let n = self.nodes[r].value.len();
                    let mut dr = vec![0.0; n];
                    for chunk in g.chunks_exact(n) {
                        dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                    self.accumulate(r, dr);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let d = g.iter().zip(&self.nodes[b].value.data).map(|(x, y)| x * y).collect();
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = g.iter().zip(&self.nodes[a].value.data).map(|(x, y)| x * y).collect();
                    self.accumulate(b, d);
                }
            }
            Op::MulCol(a, c) => {
                let n = self.nodes[a].value.last_dim();
                if self.wants(a) {
                    let col = &self.nodes[c].value.data;
                    let mut d = g.to_vec();
                    for (chunk, &s) in d.chunks_exact_mut(n).zip(col) {
                        chunk.iter_mut().for_each(|x| *x *= s);
                    }
                    self.accumulate(a, d);
                }
                if self.wants(c) {
                    let d = g
                        .chunks_exact(n)
                        .zip(self.nodes[a].value.data.chunks_exact(n))
                        .map(|(gr, ar)| dot(gr, ar))
                        .collect();
                    self.accumulate(c, d);
                }
            }
            Op::Scale(a, f) => self.accumulate(a, g.iter().map(|x| x * f).collect()),
            Op::AddScalar(a) => self.accumulate(a, g.to_vec()),
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(&self.nodes[a].value.data)
                    .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                    .collect();
                self.accumulate(a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(&self.nodes[id].value.data)
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect();
                self.accumulate(a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(&self.nodes[id].value.data).map(|(x, e)| x * e).collect();
                self.accumulate(a, d);
            }
            Op::Log(a) => {
                let d = g.iter().zip(&self.nodes[a].value.data).map(|(x, v)| x / v).collect();
                self.accumulate(a, d);
            }
            Op::Sum(a) => {
                let n = self.nodes[a].value.len();
                self.accumulate(a, vec![g[0]; n]);
            }
            Op::SumAxis { a, outer, n, inner } => {
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        d[base..base + inner].copy_from_slice(src);
                    }
                }
                self.accumulate(a, d);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[id].value;
                let n = y.last_dim().max(1);
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_exact_mut(n).zip(y.data.chunks_exact(n)).zip(g.chunks_exact(n)) {
                    let s = dot(yr, gr);
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - s);
                    }
                }
                self.accumulate(a, d);
            }
            Op::LogSoftmax(a) => {
                let y = &self.nodes[id].value;
                let n = y.last_dim().max(1);
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_exact_mut(n).zip(y.data.chunks_exact(n)).zip(g.chunks_exact(n)) {
                    let s: f64 = gr.iter().sum();
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = gv - yv.exp() * s;
                    }
                }
                self.accumulate(a, d);
            }
            Op::NormalizeRows { a, norms } => {
                let y = &self.nodes[id].value;
                let n = y.last_dim().max(1);
                let mut d = vec![0.0; y.len()];
                for (((dr, yr), gr), &norm) in d
                    .chunks_exact_mut(n)
                    .zip(y.data.chunks_exact(n))
                    .zip(g.chunks_exact(n))
                    .zip(&norms)
                {
                    let s = dot(yr, gr);
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = (gv - yv * s) / norm;
                    }
                }
                self.accumulate(a, d);
            }
            Op::Cosine { a, b, norms_a, norms_b } => {
                let n = self.nodes[a].value.last_dim().max(1);
                let cos = self.nodes[id].value.data.clone();
                let (av, bv) = (&self.nodes[a].value.data, &self.nodes[b].value.data);
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for r in 0..cos.len() {
                    let (na, nb, c, gr) = (norms_a[r], norms_b[r], cos[r], g[r]);
                    let ra = &av[r * n..(r + 1) * n];
                    let rb = &bv[r * n..(r + 1) * n];
                    for j in 0..n {
                        da[r * n + j] = gr * (rb[j] / (na * nb) - c * ra[j] / (na * na));
                        db[r * n + j] = gr * (ra[j] / (na * nb) - c * rb[j] / (nb * nb));
                    }
                }
                if self.wants(a) {
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    self.accumulate(b, db);
                }
            }
            Op::Conv1d { x, w, bias } => self.backprop_conv1d(x, w, bias, g),
            Op::Gather { a, index } => {
                let mut d = vec![0.0; self.nodes[a].value.len()];
                for (&i, &gv) in index.iter().zip(g) {
                    d[i] += gv;
                }
                self.accumulate(a, d);
            }
            Op::Reshape(a) => self.accumulate(a, g.to_vec()),
            Op::Concat { parts, outer, inner_sizes } => {
                let total: usize = inner_sizes.iter().sum();
                let mut offset = 0;
                for (&p, &sz) in parts.iter().zip(&inner_sizes) {
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(outer * sz);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + sz]);
                        }
                        self.accumulate(p, d);
                    }
                    offset += sz;
                }
            }
        }
    }

    fn backprop_conv1d(&mut self, x: usize, w: usize, bias: usize, g: &[f64]) {
        let sx = self.nodes[x].value.shape.clone();
        let sw = self.nodes[w].value.shape.clone();
        let (b, t, din) = (sx[0], sx[1], sx[2]);
        let (k, dout) = (sw[0], sw[2]);
        let half = (k / 2) as isize;
        let (want_x, want_w, want_b) = (self.wants(x), self.wants(w), self.wants(bias));
        let xd = &self.nodes[x].value.data;
        let wd = &self.nodes[w].value.data;
        let mut dx = if want_x { vec![0.0; xd.len()] } else { Vec::new() };
        let mut dw = if want_w { vec![0.0; wd.len()] } else { Vec::new() };
        let mut db = vec![0.0; dout];
        for bi in 0..b {
            for ti in 0..t {
                let grow = &g[(bi * t + ti) * dout..(bi * t + ti + 1) * dout];
                if want_b {
                    db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                }
                for ki in 0..k {
                    let src_t = ti as isize + ki as isize - half;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    let xoff = (bi * t + src_t as usize) * din;
                    let wk = ki * din * dout;
                    for ci in 0..din {
                        let wrow = &wd[wk + ci * dout..wk + (ci + 1) * dout];
                        if want_x {
                            dx[xoff + ci] += dot(wrow, grow);
                        }
                        if want_w {
                            let xv = xd[xoff + ci];
                            if xv != 0.0 {
                                axpy(xv, grow, &mut dw[wk + ci * dout..wk + (ci + 1) * dout]);
                            }
                        }
                    }
                }
            }
        }
        if want_x {
            self.accumulate(x, dx);
        }
        if want_w {
            self.accumulate(w, dw);
        }
        if want_b {
            self.accumulate(bias, db);
        }
    }
}

// ----- kernels -----

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `c[m,n] += a[m,k] · b[k,n]`.
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

/// `c[m,k] += g[m,n] · b[k,n]ᵀ`.
fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · g[m,n]`.
fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(av, grow, &mut c[p * n..(p + 1) * n]);
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

fn is_permutation(p: &[usize], t: usize) -> bool {
    if p.len() != t {
        return false;
    }
    let mut seen = vec![false; t];
    p.iter().all(|&i| i < t && !std::mem::replace(&mut seen[i], true))
}

// ----- gradient checking -----

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    /// Largest `|analytic - numeric| / max(1, |analytic|)` seen.
    pub max_discrepancy: f64,
    pub worst_index: Option<usize>,
    pub non_finite: bool,
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with the given `step`.
pub fn grad_check<F>(mut f: F, x: &Tensor, step: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let failed = |non_finite| GradCheckReport {
        passed: false,
        max_discrepancy: f64::INFINITY,
        worst_index: None,
        non_finite,
    };
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let analytic = match f(&mut tape, xv).and_then(|y| tape.backward(y).map(|_| y)) {
        Ok(y) if tape.value(y).is_finite() => tape
            .grad(xv)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()]),
        Ok(_) => return failed(true),
        Err(_) => return failed(false),
    };
    let mut eval = |point: Tensor| -> Option<f64> {
        let mut t = Tape::new();
        let v = t.constant(point);
        let y = f(&mut t, v).ok()?;
        let out = t.value(y);
        (out.len() == 1 && out.is_finite()).then(|| out.item())
    };
    let mut report = GradCheckReport {
        passed: true,
        max_discrepancy: 0.0,
        worst_index: None,
        non_finite: false,
    };
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data[i] += step;
        let mut minus = x.clone();
        minus.data[i] -= step;
        let (Some(fp), Some(fm)) = (eval(plus), eval(minus)) else {
            return failed(true);
        };
        let numeric = (fp - fm) / (2.0 * step);
        let disc = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if disc > report.max_discrepancy {
            report.max_discrepancy = disc;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_discrepancy <= tol;
    report
}
