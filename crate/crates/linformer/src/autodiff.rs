//! Minimal dense-tensor numeric core with reverse-mode differentiation.
//!
//! Everything is a row-major `f64` matrix (scalars are 1x1). A [`Tape`]
//! records executed primitives; [`Tape::backward`] replays them in reverse
//! to populate leaf gradients. The op set is exactly what the prediction
//! model needs: matmul, elementwise arithmetic, ReLU, transpose, layer
//! norm, row softmax, column slice/concat and sum-to-scalar.

use crate::error::{LabError, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type NodeId = usize;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a 1xN bias row over every row of `x`.
    AddBiasRow { x: NodeId, bias: NodeId },
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    SoftmaxRows(NodeId),
    Sum(NodeId),
    ColSlice { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Topologically ordered record of executed primitive ops.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Scalar multiplications performed inside matmuls so far.
    pub matmul_mults: u64,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { rows, cols, grad: vec![0.0; data.len()], data, op });
        self.nodes.len() - 1
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn value(&self, id: NodeId) -> Matrix {
        let n = &self.nodes[id];
        Matrix::from_vec(n.rows, n.cols, n.data.clone())
    }

    pub fn value_scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id];
        if n.rows * n.cols != 1 {
            return Err(LabError::Shape(format!("expected scalar, got {}x{}", n.rows, n.cols)));
        }
        Ok(n.data[0])
    }

    pub fn grad(&self, id: NodeId) -> Matrix {
        let n = &self.nodes[id];
        Matrix::from_vec(n.rows, n.cols, n.grad.clone())
    }

    pub fn leaf(&mut self, m: &Matrix) -> NodeId {
        self.push(m.rows, m.cols, m.data.clone(), Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(LabError::Shape(format!("matmul {}x{} * {}x{}", m, k, k2, n)));
        }
        let mut out = vec![0.0; m * n];
        mm_nn(&mut out, &self.nodes[a].data, &self.nodes[b].data, m, k, n);
        self.matmul_mults += (m * k * n) as u64;
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (r, c) {
            let (r2, c2) = self.shape(b);
            return Err(LabError::Shape(format!("elementwise {}x{} vs {}x{}", r, c, r2, c2)));
        }
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(r, c, data, op))
    }

    pub fn add_bias_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != c {
            return Err(LabError::Shape(format!("bias row {}x{} for {}x{}", br, bc, r, c)));
        }
        let mut data = self.nodes[x].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[bias].data[j];
            }
        }
        Ok(self.push(r, c, data, Op::AddBiasRow { x, bias }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let data = self.nodes[x].data.iter().map(|&v| v.max(0.0)).collect();
        self.push(r, c, data, Op::Relu(x))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let src = &self.nodes[x].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(c, r, data, Op::Transpose(x))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (rows, cols) = self.shape(x);
        let data = self.nodes[x].data.iter().map(|&v| v * c).collect();
        self.push(rows, cols, data, Op::Scale(x, c))
    }

    /// Row-wise layer normalization with affine gain/bias (each 1xD).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(LabError::Shape("layer_norm gain/bias must be 1xD".into()));
        }
        if eps <= 0.0 {
            return Err(LabError::Numeric("layer_norm eps must be positive".into()));
        }
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x].data[i * c..(i + 1) * c];
            let (mu, sigma) = row_moments(row, eps);
            for j in 0..c {
                let xhat = (row[j] - mu) / sigma;
                data[i * c + j] = self.nodes[gain].data[j] * xhat + self.nodes[bias].data[j];
            }
        }
        Ok(self.push(r, c, data, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Numerically stable softmax applied to each row independently.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x].data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        self.push(r, c, data, Op::SoftmaxRows(x))
    }

    /// Sum of all entries, as a 1x1 scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x].data.iter().sum();
        self.push(1, 1, vec![total], Op::Sum(x))
    }

    pub fn col_slice(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if start + width > c {
            return Err(LabError::Shape(format!("col_slice {}..{} of {} cols", start, start + width, c)));
        }
        let mut data = vec![0.0; r * width];
        for i in 0..r {
            data[i * width..(i + 1) * width]
                .copy_from_slice(&self.nodes[x].data[i * c + start..i * c + start + width]);
        }
        Ok(self.push(r, width, data, Op::ColSlice { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(LabError::Shape("concat_cols of nothing".into()));
        }
        let r = self.shape(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(LabError::Shape("concat_cols row mismatch".into()));
            }
            total += pc;
        }
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let pc = self.shape(p).1;
            for i in 0..r {
                data[i * total + off..i * total + off + pc]
                    .copy_from_slice(&self.nodes[p].data[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        Ok(self.push(r, total, data, Op::ConcatCols(parts.to_vec())))
    }

    /// Reverse pass from a scalar loss node. Populates `grad` on every node
    /// reachable from the loss. Calling twice on one tape is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        {
            let n = &self.nodes[loss];
            if n.rows * n.cols != 1 {
                return Err(LabError::Shape(format!(
                    "backward needs a scalar loss, got {}x{}",
                    n.rows, n.cols
                )));
            }
        }
        if self.backward_done {
            return Err(LabError::Numeric("backward called twice on one tape".into()));
        }
        self.backward_done = true;
        self.nodes[loss].grad[0] = 1.0;

        for id in (0..=loss).rev() {
            if self.nodes[id].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            // Take the output grad out to appease the borrow checker.
            let gout = std::mem::take(&mut self.nodes[id].grad);
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = self.shape(a);
                    let n = self.shape(b).1;
                    // dA += dO * B^T ; dB += A^T * dO
                    let (lhs, rhs) = two_nodes(&mut self.nodes, a, b);
                    mm_nt(&mut lhs.grad, &gout, &rhs.data, m, n, k);
                    mm_tn(&mut rhs.grad, &lhs.data, &gout, m, k, n);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut self.nodes[a].grad, &gout, 1.0);
                    acc(&mut self.nodes[b].grad, &gout, 1.0);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut self.nodes[a].grad, &gout, 1.0);
                    acc(&mut self.nodes[b].grad, &gout, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if a == b {
                        // squaring: d(x*x) = 2x dy
                        let node = &mut self.nodes[a];
                        for i in 0..gout.len() {
                            node.grad[i] += 2.0 * gout[i] * node.data[i];
                        }
                    } else {
                        let (lhs, rhs) = two_nodes(&mut self.nodes, a, b);
                        for i in 0..gout.len() {
                            lhs.grad[i] += gout[i] * rhs.data[i];
                            rhs.grad[i] += gout[i] * lhs.data[i];
                        }
                    }
                }
                Op::AddBiasRow { x, bias } => {
                    let (x, bias) = (*x, *bias);
                    let c = self.shape(bias).1;
                    acc(&mut self.nodes[x].grad, &gout, 1.0);
                    for (i, &g) in gout.iter().enumerate() {
                        self.nodes[bias].grad[i % c] += g;
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    for i in 0..gout.len() {
                        if self.nodes[x].data[i] > 0.0 {
                            self.nodes[x].grad[i] += gout[i];
                        }
                    }
                }
                Op::Transpose(x) => {
                    let x = *x;
                    let (r, c) = self.shape(x);
                    for i in 0..r {
                        for j in 0..c {
                            self.nodes[x].grad[i * c + j] += gout[j * r + i];
                        }
                    }
                }
                Op::Scale(x, s) => {
                    let (x, s) = (*x, *s);
                    acc(&mut self.nodes[x].grad, &gout, s);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                    let (r, c) = self.shape(x);
                    for i in 0..r {
                        let row: Vec<f64> = self.nodes[x].data[i * c..(i + 1) * c].to_vec();
                        let (mu, sigma) = row_moments(&row, eps);
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mu) / sigma).collect();
                        let dy = &gout[i * c..(i + 1) * c];
                        let mut dxhat = vec![0.0; c];
                        for j in 0..c {
                            dxhat[j] = dy[j] * self.nodes[gain].data[j];
                            self.nodes[gain].grad[j] += dy[j] * xhat[j];
                            self.nodes[bias].grad[j] += dy[j];
                        }
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            self.nodes[x].grad[i * c + j] +=
                                (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / sigma;
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    let (r, c) = self.shape(id);
                    for i in 0..r {
                        let y: Vec<f64> = self.nodes[id].data[i * c..(i + 1) * c].to_vec();
                        let dy = &gout[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(dy).map(|(a, &b)| a * b).sum();
                        for j in 0..c {
                            self.nodes[x].grad[i * c + j] += y[j] * (dy[j] - dot);
                        }
                    }
                }
                Op::Sum(x) => {
                    let x = *x;
                    let g = gout[0];
                    for v in self.nodes[x].grad.iter_mut() {
                        *v += g;
                    }
                }
                Op::ColSlice { x, start } => {
                    let (x, start) = (*x, *start);
                    let c = self.shape(x).1;
                    let (r, w) = self.shape(id);
                    for i in 0..r {
                        for j in 0..w {
                            self.nodes[x].grad[i * c + start + j] += gout[i * w + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let (r, total) = self.shape(id);
                    let mut off = 0;
                    for p in parts {
                        let pc = self.shape(p).1;
                        for i in 0..r {
                            for j in 0..pc {
                                self.nodes[p].grad[i * pc + j] += gout[i * total + off + j];
                            }
                        }
                        off += pc;
                    }
                }
            }
            self.nodes[id].grad = gout;
        }
        Ok(())
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / c;
    (mu, (var + eps).sqrt())
}

fn acc(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn two_nodes(nodes: &mut [Node], a: usize, b: usize) -> (&mut Node, &mut Node) {
    assert_ne!(a, b, "matmul/mul with aliased operands is not recorded");
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// out(m x n) += A(m x k) * B(k x n), all row-major.
fn mm_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out(m x k) += A(m x n) * B(k x n)^T.
fn mm_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for t in 0..n {
                s += arow[t] * brow[t];
            }
            out[i * k + j] += s;
        }
    }
}

/// out(k x n) += A(m x k)^T * B(m x n).
fn mm_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}
