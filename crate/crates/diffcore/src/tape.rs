//! Operation tape for reverse-mode differentiation.
//!
//! Every forward operation evaluates eagerly and appends a node holding its
//! value and the operation that produced it. [`Tape::gradients`] walks the
//! nodes in exact reverse order.
//!
//! Shape rules:
//! - `matmul`: `[m,k] x [k,n] -> [m,n]`
//! - `add`, `sub`, `mul`: the right operand either has the left operand's
//!   shape, holds a single value, is a row vector `[n]`/`[1,n]` broadcast
//!   over the rows of `[m,n]`, or is a column `[m,1]` broadcast over columns.
//! - `sum`, `mean`: full reduction to `[]`.
//! - `sum_lastdim`, `l2norm_sq`: `[m,n] -> [m]`, `[n] -> []`.
//! - `softmax_lastdim`: per row of the last dimension, shifted by the row max.
//! - `concat`: along axis 0 (rows) or axis 1 (columns of rank-2 inputs).
//! - `slice`: contiguous range along axis 0 or 1.
//!
//! Beyond the elementwise set there are `transpose`, `reshape`,
//! `gather_rows` (row lookup by index) and `spmm` (constant sparse matrix
//! times dense), which embedding lookup and graph propagation need.

use std::fmt;
use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::param::{ParamId, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, transpose_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    Sum,
    SumLastDim,
    Mean,
    Relu,
    Silu,
    Sigmoid,
    Exp,
    Log,
    SoftmaxLastDim,
    L2NormSq,
    Concat,
    Slice,
    Reshape,
    GatherRows,
    SpMM,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::SumLastDim => "sum-lastdim",
            OpKind::Mean => "mean",
            OpKind::Relu => "relu",
            OpKind::Silu => "silu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::SoftmaxLastDim => "softmax-lastdim",
            OpKind::L2NormSq => "l2norm-sq",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::GatherRows => "gather-rows",
            OpKind::SpMM => "spmm",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Column,
}

fn broadcast_kind(op: OpKind, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 && b.shape().len() <= 1 {
        return Ok(Broadcast::Scalar);
    }
    if let [m, n] = *a.shape() {
        match *b.shape() {
            [bn] if bn == n => return Ok(Broadcast::Row),
            [1, bn] if bn == n => return Ok(Broadcast::Row),
            [bm, 1] if bm == m => return Ok(Broadcast::Column),
            _ => {}
        }
    }
    Err(DiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

#[inline]
fn rhs_index(kind: Broadcast, idx: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => idx,
        Broadcast::Scalar => 0,
        Broadcast::Row => idx % cols,
        Broadcast::Column => idx / cols,
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[rhs_index(kind, i, cols)]))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Sums a full-size gradient down to the broadcast operand's shape.
fn reduce_to(g: &[f64], kind: Broadcast, cols: usize, target: &[usize]) -> Tensor {
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    for (i, &v) in g.iter().enumerate() {
        out[rhs_index(kind, i, cols)] += v;
    }
    Tensor::new(target.to_vec(), out).expect("target shape")
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Sum(Var),
    SumLastDim(Var),
    Mean(Var),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxLastDim(Var),
    L2NormSq(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize, len: usize },
    Reshape(Var),
    GatherRows { input: Var, indices: Arc<Vec<usize>> },
    SpMM { matrix: Arc<SparseMatrix>, input: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::SumLastDim(_) => OpKind::SumLastDim,
            Op::Mean(_) => OpKind::Mean,
            Op::Relu(_) => OpKind::Relu,
            Op::Silu(_) => OpKind::Silu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::SoftmaxLastDim(_) => OpKind::SoftmaxLastDim,
            Op::L2NormSq(_) => OpKind::L2NormSq,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::SpMM { .. } => OpKind::SpMM,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_dim_rows(op: OpKind, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n] => Ok((1, *n)),
        [m, n] => Ok((*m, *n)),
        s => Err(DiffError::BadShape {
            op,
            shape: s.to_vec(),
            reason: "expected rank 1 or 2",
        }),
    }
}

fn reduced_shape(t: &Tensor) -> Vec<usize> {
    match t.shape() {
        [m, _] => vec![*m],
        _ => Vec::new(),
    }
}

fn softmax_rows(x: &Tensor, rows: usize, cols: usize) -> Tensor {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut z = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn axis_extent(op: OpKind, t: &Tensor, axis: usize) -> Result<usize> {
    match (t.shape(), axis) {
        ([n], 0) => Ok(*n),
        ([m, _], 0) => Ok(*m),
        ([_, n], 1) => Ok(*n),
        (s, _) => Err(DiffError::BadShape {
            op,
            shape: s.to_vec(),
            reason: "axis not available for this rank",
        }),
    }
}

/// Evaluates `op` against already computed node values.
fn eval(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |var: &Var| &nodes[var.0].value;
    let kind = op.kind();
    let out = match op {
        Op::Leaf | Op::Param(_) => unreachable!("leaves are not re-evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            match (a.shape(), b.shape()) {
                ([m, k], [k2, n]) if k == k2 => {
                    Tensor::matrix(*m, *n, matmul_raw(a.data(), b.data(), *m, *k, *n))?
                }
                _ => {
                    return Err(DiffError::ShapeMismatch {
                        op: kind,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    })
                }
            }
        }
        Op::Transpose(a) => {
            let a = v(a);
            match a.shape() {
                [m, n] => Tensor::matrix(*n, *m, transpose_raw(a.data(), *m, *n))?,
                s => {
                    return Err(DiffError::BadShape {
                        op: kind,
                        shape: s.to_vec(),
                        reason: "expected rank 2",
                    })
                }
            }
        }
        Op::Add(a, b, k) => binary(v(a), v(b), *k, |x, y| x + y),
        Op::Sub(a, b, k) => binary(v(a), v(b), *k, |x, y| x - y),
        Op::Mul(a, b, k) => binary(v(a), v(b), *k, |x, y| x * y),
        Op::Scale(a, c) => v(a).map(|x| c * x),
        Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
        Op::Mean(a) => {
            let a = v(a);
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        Op::SumLastDim(a) | Op::L2NormSq(a) => {
            let a = v(a);
            let (rows, cols) = last_dim_rows(kind, a)?;
            let square = matches!(op, Op::L2NormSq(_));
            let data = (0..rows)
                .map(|r| {
                    let row = &a.data()[r * cols..(r + 1) * cols];
                    if square {
                        row.iter().map(|x| x * x).sum()
                    } else {
                        row.iter().sum()
                    }
                })
                .collect();
            Tensor::new(reduced_shape(a), data)?
        }
        Op::Relu(a) => v(a).map(|x| x.max(0.0)),
        Op::Silu(a) => v(a).map(|x| x * sigmoid(x)),
        Op::Sigmoid(a) => v(a).map(sigmoid),
        Op::Exp(a) => v(a).map(f64::exp),
        Op::Log(a) => v(a).map(f64::ln),
        Op::SoftmaxLastDim(a) => {
            let a = v(a);
            let (rows, cols) = last_dim_rows(kind, a)?;
            softmax_rows(a, rows, cols)
        }
        Op::Concat { parts, axis } => concat(parts.iter().map(v).collect(), *axis)?,
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => slice(v(input), *axis, *start, *len)?,
        Op::Reshape(_) => unreachable!("reshape carries its target shape in the node"),
        Op::GatherRows { input, indices } => {
            let a = v(input);
            let (rows, cols) = match a.shape() {
                [m, n] => (*m, *n),
                s => {
                    return Err(DiffError::BadShape {
                        op: kind,
                        shape: s.to_vec(),
                        reason: "expected rank 2",
                    })
                }
            };
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices.iter() {
                if i >= rows {
                    return Err(DiffError::IndexOutOfRange {
                        op: kind,
                        index: i,
                        extent: rows,
                    });
                }
                data.extend_from_slice(a.row(i));
            }
            Tensor::matrix(indices.len(), cols, data)?
        }
        Op::SpMM { matrix, input } => {
            let a = v(input);
            match a.shape() {
                [m, n] if *m == matrix.cols() => {
                    Tensor::matrix(matrix.rows(), *n, matrix.mul_dense(a.data(), *n))?
                }
                _ => {
                    return Err(DiffError::ShapeMismatch {
                        op: kind,
                        lhs: vec![matrix.rows(), matrix.cols()],
                        rhs: a.shape().to_vec(),
                    })
                }
            }
        }
    };
    Ok(out)
}

fn concat(parts: Vec<&Tensor>, axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or(DiffError::BadShape {
        op: OpKind::Concat,
        shape: Vec::new(),
        reason: "no inputs",
    })?;
    let rank = first.shape().len();
    let mismatch = |t: &Tensor| DiffError::ShapeMismatch {
        op: OpKind::Concat,
        lhs: first.shape().to_vec(),
        rhs: t.shape().to_vec(),
    };
    match (rank, axis) {
        (1, 0) => {
            let mut data = Vec::new();
            for p in &parts {
                if p.shape().len() != 1 {
                    return Err(mismatch(p));
                }
                data.extend_from_slice(p.data());
            }
            Ok(Tensor::vector(data))
        }
        (2, 0) => {
            let cols = first.shape()[1];
            let mut data = Vec::new();
            let mut rows = 0;
            for p in &parts {
                match p.shape() {
                    [m, n] if *n == cols => {
                        rows += m;
                        data.extend_from_slice(p.data());
                    }
                    _ => return Err(mismatch(p)),
                }
            }
            Tensor::matrix(rows, cols, data)
        }
        (2, 1) => {
            let rows = first.shape()[0];
            let mut cols = 0;
            for p in &parts {
                match p.shape() {
                    [m, n] if *m == rows => cols += n,
                    _ => return Err(mismatch(p)),
                }
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Tensor::matrix(rows, cols, data)
        }
        _ => Err(DiffError::BadShape {
            op: OpKind::Concat,
            shape: first.shape().to_vec(),
            reason: "axis not available for this rank",
        }),
    }
}

fn slice(a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let extent = axis_extent(OpKind::Slice, a, axis)?;
    if start + len > extent {
        return Err(DiffError::IndexOutOfRange {
            op: OpKind::Slice,
            index: start + len,
            extent,
        });
    }
    match (a.shape(), axis) {
        ([_], 0) => Ok(Tensor::vector(a.data()[start..start + len].to_vec())),
        ([_, n], 0) => Tensor::matrix(len, *n, a.data()[start * n..(start + len) * n].to_vec()),
        ([m, _], 1) => {
            let mut data = Vec::with_capacity(m * len);
            for r in 0..*m {
                data.extend_from_slice(&a.row(r)[start..start + len]);
            }
            Tensor::matrix(*m, len, data)
        }
        _ => unreachable!("checked by axis_extent"),
    }
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Records differentiable operations in execution order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op.kind() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        self.push(op, value)
    }

    /// Constant input; receives no parameter gradient.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    /// Registers the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let k = broadcast_kind(OpKind::Add, self.value(a), self.value(b))?;
        self.record(Op::Add(a, b, k))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let k = broadcast_kind(OpKind::Sub, self.value(a), self.value(b))?;
        self.record(Op::Sub(a, b, k))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let k = broadcast_kind(OpKind::Mul, self.value(a), self.value(b))?;
        self.record(Op::Mul(a, b, k))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    pub fn sum_lastdim(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SumLastDim(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log(a))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SoftmaxLastDim(a))
    }

    pub fn l2norm_sq(&mut self, a: Var) -> Result<Var> {
        self.record(Op::L2NormSq(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.record(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Slice {
            input: a,
            axis,
            start,
            len,
        })
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape).map_err(|_| DiffError::BadShape {
            op: OpKind::Reshape,
            shape: self.value(a).shape().to_vec(),
            reason: "element count differs",
        })?;
        self.push(Op::Reshape(a), value)
    }

    pub fn gather_rows(&mut self, a: Var, indices: impl Into<Arc<Vec<usize>>>) -> Result<Var> {
        self.record(Op::GatherRows {
            input: a,
            indices: indices.into(),
        })
    }

    pub fn spmm(&mut self, matrix: Arc<SparseMatrix>, a: Var) -> Result<Var> {
        self.record(Op::SpMM { matrix, input: a })
    }

    /// Recomputes every node from the recorded leaves, in recording order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf | Op::Param(_) => node.value.clone(),
                Op::Reshape(a) => fresh[a.0].value.reshape(node.value.shape().to_vec())?,
                op => eval(op, &fresh)?,
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(fresh.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d`loss`/d`param` into every parameter registered on this
    /// tape. Parameters not reachable from `loss` are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[idx].as_ref()) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let ga = matmul_nt(g.data(), bv.data(), m, n, k);
                let gb = matmul_tn(av.data(), g.data(), m, k, n);
                acc(*a, Tensor::matrix(m, k, ga).unwrap());
                acc(*b, Tensor::matrix(k, n, gb).unwrap());
            }
            Op::Transpose(a) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                acc(*a, Tensor::matrix(n, m, transpose_raw(g.data(), m, n)).unwrap());
            }
            Op::Add(a, b, k) | Op::Sub(a, b, k) => {
                let cols = val(a).cols();
                let mut gb = reduce_to(g.data(), *k, cols, val(b).shape());
                if matches!(node.op, Op::Sub(..)) {
                    gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                }
                acc(*a, g.clone());
                acc(*b, gb);
            }
            Op::Mul(a, b, k) => {
                let (av, bv) = (val(a), val(b));
                let ga = binary(g, bv, *k, |gi, bi| gi * bi);
                let prod = g.zip_map(av, |gi, ai| gi * ai);
                let gb = reduce_to(prod.data(), *k, av.cols(), bv.shape());
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::Sum(a) => acc(*a, Tensor::full(val(a).shape().to_vec(), g.item())),
            Op::Mean(a) => {
                let av = val(a);
                acc(*a, Tensor::full(av.shape().to_vec(), g.item() / av.len() as f64));
            }
            Op::SumLastDim(a) => {
                let av = val(a);
                let cols = av.cols();
                let data = (0..av.len()).map(|i| g.data()[i / cols]).collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).unwrap());
            }
            Op::L2NormSq(a) => {
                let av = val(a);
                let cols = av.cols();
                let data = av
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| 2.0 * x * g.data()[i / cols])
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).unwrap());
            }
            Op::Relu(a) => {
                acc(*a, g.zip_map(val(a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Silu(a) => {
                acc(
                    *a,
                    g.zip_map(val(a), |gi, x| {
                        let s = sigmoid(x);
                        gi * s * (1.0 + x * (1.0 - s))
                    }),
                );
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, s| gi * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip_map(y, |gi, e| gi * e)),
            Op::Log(a) => acc(*a, g.zip_map(val(a), |gi, x| gi / x)),
            Op::SoftmaxLastDim(a) => {
                let cols = y.cols();
                let rows = y.len() / cols.max(1);
                let mut out = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        out[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).unwrap());
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(p);
                    let len = axis_extent(OpKind::Concat, pv, *axis).unwrap();
                    acc(*p, slice(g, *axis, offset, len).unwrap());
                    offset += len;
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let iv = val(input);
                let mut out = Tensor::zeros(iv.shape().to_vec());
                match (iv.shape(), axis) {
                    ([_], 0) => out.data_mut()[*start..start + len].copy_from_slice(g.data()),
                    ([_, n], 0) => out.data_mut()[start * n..(start + len) * n]
                        .copy_from_slice(g.data()),
                    ([m, n], 1) => {
                        for r in 0..*m {
                            out.data_mut()[r * n + start..r * n + start + len]
                                .copy_from_slice(g.row(r));
                        }
                    }
                    _ => unreachable!(),
                }
                acc(*input, out);
            }
            Op::Reshape(a) => acc(*a, g.reshape(val(a).shape().to_vec()).unwrap()),
            Op::GatherRows { input, indices } => {
                let iv = val(input);
                let cols = iv.cols();
                let mut out = Tensor::zeros(iv.shape().to_vec());
                for (k, &i) in indices.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                acc(*input, out);
            }
            Op::SpMM { matrix, input } => {
                let iv = val(input);
                let width = iv.cols();
                let data = matrix.tmul_dense(g.data(), width);
                acc(*input, Tensor::new(iv.shape().to_vec(), data).unwrap());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.leaf(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let x = tape.leaf(Tensor::from_rows(&[[3.0], [4.0]]).unwrap()).unwrap();
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn sigmoid_and_softmax_basics() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.0])).unwrap();
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let l = tape.leaf(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let p = tape.softmax_lastdim(l).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
        let big = tape.leaf(Tensor::vector(vec![1000.0, 1000.0])).unwrap();
        let p = tape.softmax_lastdim(big).unwrap();
        close(tape.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "matmul: incompatible shapes [2, 3] and [2, 3]");
        let c = tape.leaf(Tensor::zeros(vec![4])).unwrap();
        let err = tape.add(a, c).unwrap_err();
        assert!(err.to_string().contains("[2, 3] and [4]"));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut tape = Tape::new();
        let err = tape.leaf(Tensor::vector(vec![1.0, f64::NAN])).unwrap_err();
        assert_eq!(err, DiffError::NonFinite { op: OpKind::Leaf });
        let zero = tape.leaf(Tensor::vector(vec![0.0])).unwrap();
        assert!(matches!(tape.log(zero), Err(DiffError::NonFinite { op: OpKind::Log })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn l2norm_sq_gradient_is_two_p() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id).unwrap();
        let s = tape.l2norm_sq(p).unwrap();
        assert_eq!(tape.value(s).shape(), &[] as &[usize]);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_multiplier_gives_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![0.7]));
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let s = tape.sigmoid(w).unwrap();
        let z = tape.scale(s, 0.0).unwrap();
        let loss = tape.sum(z).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[0.0]);
    }

    #[test]
    fn unreachable_parameter_stays_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::vector(vec![1.0]));
        let unused = store.add("unused", Tensor::vector(vec![5.0, 6.0]));
        let mut tape = Tape::new();
        let u = tape.param(&store, used).unwrap();
        let _ = tape.param(&store, unused).unwrap();
        let loss = tape.sum(u).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let err = tape.backward(v, &mut store).unwrap_err();
        assert_eq!(err, DiffError::NonScalarLoss { shape: vec![2] });
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[[0.1, -0.4, 0.9], [1.3, 0.2, -0.7]]).unwrap()).unwrap();
        let b = tape.leaf(Tensor::from_rows(&[[0.5, 0.1], [-0.2, 0.3], [0.8, -1.1]]).unwrap()).unwrap();
        let c = tape.matmul(a, b).unwrap();
        let d = tape.silu(c).unwrap();
        let e = tape.softmax_lastdim(d).unwrap();
        let f = tape.reshape(e, vec![4]).unwrap();
        let g = tape.exp(f).unwrap();
        let _ = tape.mean(g).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, t) in replayed.iter().enumerate() {
            assert_eq!(t, tape.value(Var(i)));
        }
    }

    #[test]
    fn broadcast_variants() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        let row = tape.leaf(Tensor::vector(vec![10.0, 20.0])).unwrap();
        let col = tape.leaf(Tensor::matrix(2, 1, vec![100.0, 200.0]).unwrap()).unwrap();
        let s = tape.leaf(Tensor::scalar(0.5)).unwrap();
        let r = tape.add(m, row).unwrap();
        assert_eq!(tape.value(r).data(), &[11.0, 22.0, 13.0, 24.0]);
        let c = tape.add(m, col).unwrap();
        assert_eq!(tape.value(c).data(), &[101.0, 102.0, 203.0, 204.0]);
        let k = tape.mul(m, s).unwrap();
        assert_eq!(tape.value(k).data(), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[[1.0], [2.0]]).unwrap()).unwrap();
        let b = tape.leaf(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap()).unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = tape.slice(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(s), tape.value(b));
        let rows = tape.concat(&[b, b], 0).unwrap();
        assert_eq!(tape.value(rows).shape(), &[4, 2]);
    }
}
