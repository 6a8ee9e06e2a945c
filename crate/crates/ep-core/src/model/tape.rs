//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A forward pass records operations on a tape; `backward` replays it in
//! reverse accumulating gradients. Parameters are inserted as the first
//! leaves so their gradients can be read back by index.

use crate::error::{EpError, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn row_vec(values: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(c, r) = self.at(r, c);
            }
        }
        out
    }
}

/// Index of a value on the tape.
pub type VarId = usize;

const LN_EPS: f64 = 1e-5;
const SQRT_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    MulElem(VarId, VarId),
    /// Add a 1 x C row to every row.
    AddRow(VarId, VarId),
    /// Multiply every row elementwise by a 1 x C row.
    MulRow(VarId, VarId),
    Scale(VarId, f64),
    /// Elementwise scale by a 1 x 1 variable.
    ScaleVar(VarId, VarId),
    Gelu(VarId),
    SoftmaxRows(VarId),
    /// Per-row standardization (x - mean) / std, no affine part.
    RowNorm(VarId),
    Transpose(VarId),
    Reshape(VarId),
    ConcatRows(Vec<VarId>),
    ConcatCols(Vec<VarId>),
    SliceCols(VarId, usize),
    /// Gather rows by index (also used for embedding lookup).
    GatherRows(VarId, Vec<usize>),
    SumAxis1(VarId),
    Sqrt(VarId),
    MeanAll(VarId),
    SumAll(VarId),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
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

    pub fn value(&self, id: VarId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: VarId) -> (usize, usize) {
        let m = &self.nodes[id].value;
        (m.rows, m.cols)
    }

    fn push(&mut self, value: Matrix, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Inserts a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Matrix) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shape mismatch");
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect(),
        };
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "sub shape mismatch");
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect(),
        };
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: VarId, b: VarId) -> VarId {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shape mismatch");
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
        };
        self.push(v, Op::MulElem(a, b))
    }

    pub fn add_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (x, r) = (&self.nodes[a].value, &self.nodes[row].value);
        assert_eq!(r.rows, 1, "row operand must be 1 x C");
        assert_eq!(x.cols, r.cols, "add_row width mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += r.data[j];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (x, r) = (&self.nodes[a].value, &self.nodes[row].value);
        assert_eq!(r.rows, 1, "row operand must be 1 x C");
        assert_eq!(x.cols, r.cols, "mul_row width mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] *= r.data[j];
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let x = &self.nodes[a].value;
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|p| p * s).collect(),
        };
        self.push(v, Op::Scale(a, s))
    }

    pub fn scale_var(&mut self, s: VarId, a: VarId) -> VarId {
        assert_eq!(self.shape(s), (1, 1), "scale_var takes a 1 x 1 scalar");
        let sv = self.nodes[s].value.data[0];
        let x = &self.nodes[a].value;
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|p| p * sv).collect(),
        };
        self.push(v, Op::ScaleVar(s, a))
    }

    pub fn gelu(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&p| gelu_scalar(p)).collect(),
        };
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for i in 0..v.rows {
            let row = &mut v.data[i * v.cols..(i + 1) * v.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = (*p - max).exp();
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn row_norm(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for i in 0..v.rows {
            let row = &mut v.data[i * v.cols..(i + 1) * v.cols];
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for p in row.iter_mut() {
                *p = (*p - mean) * inv;
            }
        }
        self.push(v, Op::RowNorm(a))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: VarId, rows: usize, cols: usize) -> VarId {
        let x = &self.nodes[a].value;
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let v = Matrix {
            rows,
            cols,
            data: x.data.clone(),
        };
        self.push(v, Op::Reshape(a))
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = &self.nodes[p].value;
            assert_eq!(m.cols, cols, "concat_rows width mismatch");
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        self.push(Matrix { rows, cols, data }, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = &self.nodes[p].value;
            assert_eq!(m.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                for c in 0..m.cols {
                    *v.at_mut(r, off + c) = m.at(r, c);
                }
            }
            off += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let x = &self.nodes[a].value;
        assert!(start + len <= x.cols, "slice out of range");
        let mut v = Matrix::zeros(x.rows, len);
        for r in 0..x.rows {
            for c in 0..len {
                *v.at_mut(r, c) = x.at(r, start + c);
            }
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: VarId, indices: &[usize]) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = Matrix::zeros(indices.len(), x.cols);
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < x.rows, "gather index out of range");
            for c in 0..x.cols {
                *v.at_mut(r, c) = x.at(i, c);
            }
        }
        self.push(v, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn sum_axis1(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = Matrix::zeros(x.rows, 1);
        for r in 0..x.rows {
            v.data[r] = (0..x.cols).map(|c| x.at(r, c)).sum();
        }
        self.push(v, Op::SumAxis1(a))
    }

    /// Elementwise sqrt with an additive guard keeping the derivative finite
    /// at zero.
    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|p| (p + SQRT_GUARD).sqrt()).collect(),
        };
        self.push(v, Op::Sqrt(a))
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let v = Matrix::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let v = Matrix::scalar(x.data.iter().sum::<f64>());
        self.push(v, Op::SumAll(a))
    }

    /// Reverse pass from a scalar output; returns one gradient per node.
    pub fn backward(&self, output: VarId) -> Result<Vec<Matrix>> {
        let out = &self.nodes[output].value;
        if (out.rows, out.cols) != (1, 1) {
            return Err(EpError::ShapeMismatch(
                "backward requires a scalar output".into(),
            ));
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[output].data[0] = 1.0;

        for id in (0..=output).rev() {
            let g = grads[id].clone();
            if g.data.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.nodes[*b].value.transpose());
                    let db = self.nodes[*a].value.transpose().matmul(&g);
                    accumulate(&mut grads[*a], &da);
                    accumulate(&mut grads[*b], &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], &g);
                    accumulate(&mut grads[*b], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], &g);
                    for (p, q) in grads[*b].data.iter_mut().zip(&g.data) {
                        *p -= q;
                    }
                }
                Op::MulElem(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.clone(), self.nodes[*b].value.clone());
                    for ((p, q), w) in grads[*a].data.iter_mut().zip(&g.data).zip(&vb.data) {
                        *p += q * w;
                    }
                    for ((p, q), w) in grads[*b].data.iter_mut().zip(&g.data).zip(&va.data) {
                        *p += q * w;
                    }
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads[*a], &g);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            grads[*row].data[c] += g.at(r, c);
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let (va, vrow) =
                        (self.nodes[*a].value.clone(), self.nodes[*row].value.clone());
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            grads[*a].data[r * g.cols + c] += g.at(r, c) * vrow.data[c];
                            grads[*row].data[c] += g.at(r, c) * va.at(r, c);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    for (p, q) in grads[*a].data.iter_mut().zip(&g.data) {
                        *p += q * s;
                    }
                }
                Op::ScaleVar(s, a) => {
                    let (sv, va) = (self.nodes[*s].value.data[0], self.nodes[*a].value.clone());
                    let mut ds = 0.0;
                    for ((p, q), w) in grads[*a].data.iter_mut().zip(&g.data).zip(&va.data) {
                        *p += q * sv;
                        ds += q * w;
                    }
                    grads[*s].data[0] += ds;
                }
                Op::Gelu(a) => {
                    let va = self.nodes[*a].value.clone();
                    for ((p, q), &x) in grads[*a].data.iter_mut().zip(&g.data).zip(&va.data) {
                        *p += q * gelu_grad(x);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    for r in 0..y.rows {
                        let dot: f64 = (0..y.cols).map(|c| g.at(r, c) * y.at(r, c)).sum();
                        for c in 0..y.cols {
                            grads[*a].data[r * y.cols + c] += y.at(r, c) * (g.at(r, c) - dot);
                        }
                    }
                }
                Op::RowNorm(a) => {
                    let x = &self.nodes[*a].value;
                    let y = &self.nodes[id].value;
                    let n = x.cols as f64;
                    for r in 0..x.rows {
                        let row = &x.data[r * x.cols..(r + 1) * x.cols];
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let gmean: f64 = (0..x.cols).map(|c| g.at(r, c)).sum::<f64>() / n;
                        let gydot: f64 =
                            (0..x.cols).map(|c| g.at(r, c) * y.at(r, c)).sum::<f64>() / n;
                        for c in 0..x.cols {
                            grads[*a].data[r * x.cols + c] +=
                                inv * (g.at(r, c) - gmean - y.at(r, c) * gydot);
                        }
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    accumulate(&mut grads[*a], &gt);
                }
                Op::Reshape(a) => {
                    for (p, q) in grads[*a].data.iter_mut().zip(&g.data) {
                        *p += q;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = grads[p].len();
                        for i in 0..n {
                            grads[p].data[i] += g.data[off + i];
                        }
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (pr, pc) = (grads[p].rows, grads[p].cols);
                        for r in 0..pr {
                            for c in 0..pc {
                                grads[p].data[r * pc + c] += g.at(r, off + c);
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = grads[*a].cols;
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            grads[*a].data[r * ac + start + c] += g.at(r, c);
                        }
                    }
                }
                Op::GatherRows(a, indices) => {
                    let ac = grads[*a].cols;
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..ac {
                            grads[*a].data[i * ac + c] += g.at(r, c);
                        }
                    }
                }
                Op::SumAxis1(a) => {
                    let ac = grads[*a].cols;
                    for r in 0..grads[*a].rows {
                        for c in 0..ac {
                            grads[*a].data[r * ac + c] += g.data[r];
                        }
                    }
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[id].value;
                    for ((p, q), &s) in grads[*a].data.iter_mut().zip(&g.data).zip(&y.data) {
                        *p += q * 0.5 / s;
                    }
                }
                Op::MeanAll(a) => {
                    let n = grads[*a].len() as f64;
                    let gv = g.data[0] / n;
                    for p in grads[*a].data.iter_mut() {
                        *p += gv;
                    }
                }
                Op::SumAll(a) => {
                    let gv = g.data[0];
                    for p in grads[*a].data.iter_mut() {
                        *p += gv;
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(into: &mut Matrix, g: &Matrix) {
    debug_assert_eq!((into.rows, into.cols), (g.rows, g.cols));
    for (p, q) in into.data.iter_mut().zip(&g.data) {
        *p += q;
    }
}
