//! Reverse-mode autodiff over dense f64 matrices.
//!
//! Define-by-run: every forward pass builds a fresh tape. Nodes are stored in
//! execution order and backward walks them in exact reverse order. A tape can
//! run backward once; a second call without a new forward is an error.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Guard added to L2 row norms before division.
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Constant row-sparse matrix, used for fixed adjacency propagation.
#[derive(Debug, Clone)]
pub struct SparseRows {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl SparseRows {
    /// Build from a dense matrix, dropping exact zeros.
    pub fn from_dense(m: &Tensor) -> Self {
        let rows = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j as u32, v))
                    .collect()
            })
            .collect();
        Self {
            n_rows: m.rows(),
            n_cols: m.cols(),
            rows,
        }
    }
}

// Each variant records its full argument set even where backward relies on
// cached forward data (max pools, slices, constants), so taped programs
// stay self-describing when debugged.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    /// Constant sparse matrix times tape tensor; gradient flows to the tensor only.
    SparseMul(Arc<SparseRows>, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId, f64),
    /// (matrix m x n, row vector 1 x n)
    AddRowBroadcast(VarId, VarId),
    /// (matrix m x n, column m x 1): out_ij = a_ij / b_i
    DivColBroadcast(VarId, VarId),
    Relu(VarId),
    Tanh(VarId),
    Square(VarId),
    Transpose(VarId),
    RowL2Normalize(VarId),
    /// Row softmax-free normalization: out_ij = a_ij / (sum_j a_ij + eps)
    RowSumNormalize(VarId, f64),
    RowSum(VarId),
    RowMean(VarId),
    ColMax(VarId),
    SumAll(VarId),
    ConcatRows(Vec<VarId>),
    ConcatCols(Vec<VarId>),
    SliceRows(VarId, usize, usize),
    PoolRowsMean(VarId, Arc<Vec<(usize, usize)>>),
    PoolRowsMax(VarId, Arc<Vec<(usize, usize)>>),
    PoolBlocksMean(VarId, Arc<Vec<(usize, usize)>>),
    PoolBlocksMax(VarId, Arc<Vec<(usize, usize)>>),
    /// Mean absolute difference of two same-shape tensors, scalar output.
    MaeLoss(VarId, VarId),
    /// Causal 1D convolution: input T x d_in, kernel (k*d_in) x d_out.
    CausalConv1d(VarId, VarId, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    /// Saved argmax positions for max-pooling ops (flat indices into the input).
    aux: Option<Vec<u32>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: VarId) -> Option<Tensor> {
        let n = &self.nodes[id.0];
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.value.rows(), n.value.cols(), g.clone()))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        self.push(value, Op::Leaf, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Option<Vec<u32>>) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            aux,
        });
        VarId(self.nodes.len() - 1)
    }

    fn req(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn val(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = self.val(a).matmul(self.val(b))?;
        let rq = self.req(a) || self.req(b);
        Ok(self.push(out, Op::MatMul(a, b), rq, None))
    }

    pub fn sparse_mul(&mut self, m: Arc<SparseRows>, x: VarId) -> Result<VarId> {
        let xv = self.val(x);
        if m.n_cols != xv.rows() {
            return Err(shape_err(
                "sparse_mul",
                format!("{}x{} * {}x{}", m.n_rows, m.n_cols, xv.rows(), xv.cols()),
            ));
        }
        let cols = xv.cols();
        let mut out = Tensor::zeros(m.n_rows, cols);
        for (i, row) in m.rows.iter().enumerate() {
            let orow = &mut out.data_mut()[i * cols..(i + 1) * cols];
            for &(j, w) in row {
                let xrow = xv.row(j as usize);
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o += w * v;
                }
            }
        }
        let rq = self.req(x);
        Ok(self.push(out, Op::SparseMul(m, x), rq, None))
    }

    fn binary_same_shape(
        &mut self,
        a: VarId,
        b: VarId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        let (av, bv) = (self.val(a), self.val(b));
        if !av.same_shape(bv) {
            return Err(shape_err(
                name,
                format!("{}x{} vs {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data);
        let rq = self.req(a) || self.req(b);
        Ok(self.push(out, op, rq, None))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let av = self.val(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data);
        let rq = self.req(a);
        self.push(out, op, rq, None)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        self.unary(a, |x| x + c, Op::AddScalar(a, c))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let out = self.val(a).transpose();
        let rq = self.req(a);
        self.push(out, Op::Transpose(a), rq, None)
    }

    pub fn add_row_broadcast(&mut self, a: VarId, bias: VarId) -> Result<VarId> {
        let (av, bv) = (self.val(a), self.val(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err(
                "add_row_broadcast",
                format!("{}x{} + {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| x + bv.data()[idx % cols])
            .collect();
        let out = Tensor::new(av.rows(), cols, data);
        let rq = self.req(a) || self.req(bias);
        Ok(self.push(out, Op::AddRowBroadcast(a, bias), rq, None))
    }

    pub fn div_col_broadcast(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (self.val(a), self.val(b));
        if bv.cols() != 1 || bv.rows() != av.rows() {
            return Err(shape_err(
                "div_col_broadcast",
                format!("{}x{} / {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| x / bv.data()[idx / cols])
            .collect();
        let out = Tensor::new(av.rows(), cols, data);
        let rq = self.req(a) || self.req(b);
        Ok(self.push(out, Op::DivColBroadcast(a, b), rq, None))
    }

    /// Row-wise L2 normalization; zero rows stay zero (EPS_NORM guard).
    pub fn row_l2_normalize(&mut self, a: VarId) -> VarId {
        let av = self.val(a);
        let mut out = av.clone();
        for i in 0..av.rows() {
            let n = av.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let inv = 1.0 / (n + EPS_NORM);
            for v in &mut out.data_mut()[i * av.cols()..(i + 1) * av.cols()] {
                *v *= inv;
            }
        }
        let rq = self.req(a);
        self.push(out, Op::RowL2Normalize(a), rq, None)
    }

    /// out_ij = a_ij / (sum_j a_ij + eps)
    pub fn row_sum_normalize(&mut self, a: VarId, eps: f64) -> VarId {
        let av = self.val(a);
        let mut out = av.clone();
        for i in 0..av.rows() {
            let s = av.row(i).iter().sum::<f64>() + eps;
            for v in &mut out.data_mut()[i * av.cols()..(i + 1) * av.cols()] {
                *v /= s;
            }
        }
        let rq = self.req(a);
        self.push(out, Op::RowSumNormalize(a, eps), rq, None)
    }

    pub fn row_sum(&mut self, a: VarId) -> VarId {
        let av = self.val(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        let out = Tensor::new(av.rows(), 1, data);
        let rq = self.req(a);
        self.push(out, Op::RowSum(a), rq, None)
    }

    /// Mean over rows: m x n -> 1 x n.
    pub fn row_mean(&mut self, a: VarId) -> Result<VarId> {
        let av = self.val(a);
        if av.rows() == 0 {
            return Err(Error::Empty("row_mean"));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, &v) in data.iter_mut().zip(av.row(i)) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= m as f64;
        }
        let out = Tensor::new(1, n, data);
        let rq = self.req(a);
        Ok(self.push(out, Op::RowMean(a), rq, None))
    }

    /// Elementwise max over rows: m x n -> 1 x n.
    pub fn col_max(&mut self, a: VarId) -> Result<VarId> {
        let av = self.val(a);
        if av.rows() == 0 {
            return Err(Error::Empty("col_max"));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut data = av.row(0).to_vec();
        let mut arg = vec![0u32; n];
        for i in 1..m {
            for (j, &v) in av.row(i).iter().enumerate() {
                if v > data[j] {
                    data[j] = v;
                    arg[j] = i as u32;
                }
            }
        }
        let out = Tensor::new(1, n, data);
        let rq = self.req(a);
        Ok(self.push(out, Op::ColMax(a), rq, Some(arg)))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s = self.val(a).data().iter().sum();
        let rq = self.req(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rq, None)
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        let parts: Vec<VarId> = parts
            .iter()
            .copied()
            .filter(|&p| self.val(p).rows() > 0)
            .collect();
        if parts.is_empty() {
            return Err(Error::Empty("concat_rows"));
        }
        let cols = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let v = self.val(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", format!("{} vs {} cols", cols, v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, cols, data);
        let rq = parts.iter().any(|&p| self.req(p));
        Ok(self.push(out, Op::ConcatRows(parts), rq, None))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let parts: Vec<VarId> = parts
            .iter()
            .copied()
            .filter(|&p| self.val(p).cols() > 0)
            .collect();
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols"));
        }
        let rows = self.val(parts[0]).rows();
        let mut cols = 0;
        for &p in &parts {
            let v = self.val(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", format!("{} vs {} rows", rows, v.rows())));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let v = self.val(p).clone();
            for i in 0..rows {
                out.data_mut()[i * cols + off..i * cols + off + v.cols()]
                    .copy_from_slice(v.row(i));
            }
            off += v.cols();
        }
        let rq = parts.iter().any(|&p| self.req(p));
        Ok(self.push(out, Op::ConcatCols(parts), rq, None))
    }

    pub fn slice_rows(&mut self, a: VarId, start: usize, end: usize) -> Result<VarId> {
        let av = self.val(a);
        if start > end || end > av.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("[{start}, {end}) of {} rows", av.rows()),
            ));
        }
        let cols = av.cols();
        let data = av.data()[start * cols..end * cols].to_vec();
        let out = Tensor::new(end - start, cols, data);
        let rq = self.req(a);
        Ok(self.push(out, Op::SliceRows(a, start, end), rq, None))
    }

    fn check_windows(rows: usize, windows: &[(usize, usize)]) -> Result<()> {
        let mut expect = 0;
        for &(s, e) in windows {
            if s != expect || e <= s {
                return Err(shape_err("pool", format!("bad window [{s}, {e})")));
            }
            expect = e;
        }
        if expect != rows {
            return Err(shape_err(
                "pool",
                format!("windows cover {expect} of {rows} rows"),
            ));
        }
        Ok(())
    }

    /// Windowed mean over rows (1D mean pooling of node embeddings).
    pub fn pool_rows_mean(&mut self, a: VarId, windows: Arc<Vec<(usize, usize)>>) -> Result<VarId> {
        let av = self.val(a);
        Self::check_windows(av.rows(), &windows)?;
        let n = av.cols();
        let mut out = Tensor::zeros(windows.len(), n);
        for (w, &(s, e)) in windows.iter().enumerate() {
            let orow = &mut out.data_mut()[w * n..(w + 1) * n];
            for i in s..e {
                for (o, &v) in orow.iter_mut().zip(av.row(i)) {
                    *o += v;
                }
            }
            let inv = 1.0 / (e - s) as f64;
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let rq = self.req(a);
        Ok(self.push(out, Op::PoolRowsMean(a, windows), rq, None))
    }

    /// Windowed elementwise max over rows (1D max pooling of node embeddings).
    pub fn pool_rows_max(&mut self, a: VarId, windows: Arc<Vec<(usize, usize)>>) -> Result<VarId> {
        let av = self.val(a);
        Self::check_windows(av.rows(), &windows)?;
        let n = av.cols();
        let mut out = Tensor::zeros(windows.len(), n);
        let mut arg = vec![0u32; windows.len() * n];
        for (w, &(s, e)) in windows.iter().enumerate() {
            for j in 0..n {
                let mut best = av.at(s, j);
                let mut bi = s;
                for i in s + 1..e {
                    if av.at(i, j) > best {
                        best = av.at(i, j);
                        bi = i;
                    }
                }
                out.set(w, j, best);
                arg[w * n + j] = (bi * n + j) as u32;
            }
        }
        let rq = self.req(a);
        Ok(self.push(out, Op::PoolRowsMax(a, windows), rq, Some(arg)))
    }

    /// Blockwise mean of a square matrix (2D mean pooling of the adjacency).
    pub fn pool_blocks_mean(
        &mut self,
        a: VarId,
        windows: Arc<Vec<(usize, usize)>>,
    ) -> Result<VarId> {
        let av = self.val(a);
        if av.rows() != av.cols() {
            return Err(shape_err("pool_blocks", "matrix must be square"));
        }
        Self::check_windows(av.rows(), &windows)?;
        let w = windows.len();
        let mut out = Tensor::zeros(w, w);
        for (bi, &(rs, re)) in windows.iter().enumerate() {
            for (bj, &(cs, ce)) in windows.iter().enumerate() {
                let mut sum = 0.0;
                for i in rs..re {
                    for j in cs..ce {
                        sum += av.at(i, j);
                    }
                }
                out.set(bi, bj, sum / ((re - rs) * (ce - cs)) as f64);
            }
        }
        let rq = self.req(a);
        Ok(self.push(out, Op::PoolBlocksMean(a, windows), rq, None))
    }

    /// Blockwise max of a square matrix (2D max pooling of the adjacency).
    pub fn pool_blocks_max(
        &mut self,
        a: VarId,
        windows: Arc<Vec<(usize, usize)>>,
    ) -> Result<VarId> {
        let av = self.val(a);
        if av.rows() != av.cols() {
            return Err(shape_err("pool_blocks", "matrix must be square"));
        }
        Self::check_windows(av.rows(), &windows)?;
        let w = windows.len();
        let n = av.cols();
        let mut out = Tensor::zeros(w, w);
        let mut arg = vec![0u32; w * w];
        for (bi, &(rs, re)) in windows.iter().enumerate() {
            for (bj, &(cs, ce)) in windows.iter().enumerate() {
                let mut best = av.at(rs, cs);
                let mut bidx = rs * n + cs;
                for i in rs..re {
                    for j in cs..ce {
                        if av.at(i, j) > best {
                            best = av.at(i, j);
                            bidx = i * n + j;
                        }
                    }
                }
                out.set(bi, bj, best);
                arg[bi * w + bj] = bidx as u32;
            }
        }
        let rq = self.req(a);
        Ok(self.push(out, Op::PoolBlocksMax(a, windows), rq, Some(arg)))
    }

    /// Mean absolute difference, scalar output.
    pub fn mae_loss(&mut self, pred: VarId, target: VarId) -> Result<VarId> {
        let (pv, tv) = (self.val(pred), self.val(target));
        if !pv.same_shape(tv) {
            return Err(shape_err(
                "mae_loss",
                format!("{}x{} vs {}x{}", pv.rows(), pv.cols(), tv.rows(), tv.cols()),
            ));
        }
        if pv.is_empty() {
            return Err(Error::Empty("mae_loss"));
        }
        let s: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let out = Tensor::scalar(s / pv.len() as f64);
        let rq = self.req(pred) || self.req(target);
        Ok(self.push(out, Op::MaeLoss(pred, target), rq, None))
    }

    /// Causal 1D convolution (kernel stored as (k*d_in) x d_out):
    /// y_t = sum_{i=0}^{k-1} x_{t-i} f_i, terms with t-i < 0 dropped.
    pub fn causal_conv1d(&mut self, x: VarId, kernel: VarId, k: usize) -> Result<VarId> {
        let (xv, kv) = (self.val(x), self.val(kernel));
        let d_in = xv.cols();
        if k == 0 || kv.rows() != k * d_in {
            return Err(shape_err(
                "causal_conv1d",
                format!("kernel {}x{} vs k={k}, d_in={d_in}", kv.rows(), kv.cols()),
            ));
        }
        let (t_len, d_out) = (xv.rows(), kv.cols());
        let mut out = Tensor::zeros(t_len, d_out);
        for t in 0..t_len {
            let orow = &mut out.data_mut()[t * d_out..(t + 1) * d_out];
            for i in 0..k.min(t + 1) {
                let xrow = xv.row(t - i);
                for (p, &xval) in xrow.iter().enumerate() {
                    if xval == 0.0 {
                        continue;
                    }
                    let frow = kv.row(i * d_in + p);
                    for (o, &f) in orow.iter_mut().zip(frow) {
                        *o += xval * f;
                    }
                }
            }
        }
        let rq = self.req(x) || self.req(kernel);
        Ok(self.push(out, Op::CausalConv1d(x, kernel, k), rq, None))
    }

    fn accumulate(&mut self, id: VarId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
        for (gi, &d) in g.iter_mut().zip(delta) {
            *gi += d;
        }
    }

    /// Run reverse-mode accumulation from a scalar loss.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        if self.val(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        if self.nodes[loss.0].requires_grad {
            self.nodes[loss.0].grad = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            let aux = self.nodes[idx].aux.clone();
            self.backprop_one(idx, &op, &g, aux.as_deref())?;
        }
        Ok(())
    }

    fn backprop_one(&mut self, idx: usize, op: &Op, g: &[f64], aux: Option<&[u32]>) -> Result<()> {
        let out_shape = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gt = Tensor::new(out_shape.0, out_shape.1, g.to_vec());
                if self.req(*a) {
                    let bt = self.val(*b).transpose();
                    let da = gt.matmul(&bt)?;
                    self.accumulate(*a, da.data());
                }
                if self.req(*b) {
                    let at = self.val(*a).transpose();
                    let db = at.matmul(&gt)?;
                    self.accumulate(*b, db.data());
                }
            }
            Op::SparseMul(m, x) => {
                if self.req(*x) {
                    let cols = self.val(*x).cols();
                    let mut dx = vec![0.0; self.val(*x).len()];
                    for (i, row) in m.rows.iter().enumerate() {
                        let grow = &g[i * cols..(i + 1) * cols];
                        for &(j, w) in row {
                            let dj = &mut dx[j as usize * cols..(j as usize + 1) * cols];
                            for (d, &gv) in dj.iter_mut().zip(grow) {
                                *d += w * gv;
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(*b, &neg);
            }
            Op::Mul(a, b) => {
                if self.req(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.val(*b).data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.req(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.val(*a).data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accumulate(*b, &db);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate(*a, &da);
            }
            Op::AddScalar(a, _) => self.accumulate(*a, g),
            Op::AddRowBroadcast(a, bias) => {
                self.accumulate(*a, g);
                if self.req(*bias) {
                    let cols = self.val(*bias).cols();
                    let mut db = vec![0.0; cols];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % cols] += gv;
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::DivColBroadcast(a, b) => {
                let cols = self.val(*a).cols();
                let bv = self.val(*b).data().to_vec();
                if self.req(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv / bv[i / cols])
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.req(*b) {
                    let av = self.val(*a).data();
                    let mut db = vec![0.0; bv.len()];
                    for (i, &gv) in g.iter().enumerate() {
                        let r = i / cols;
                        db[r] -= gv * av[i] / (bv[r] * bv[r]);
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Tanh(a) => {
                let yv = self.nodes[idx].value.data().to_vec();
                let da: Vec<f64> = g
                    .iter()
                    .zip(&yv)
                    .map(|(&gv, &y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Square(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&gv, &x)| gv * 2.0 * x)
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Transpose(a) => {
                let (m, n) = out_shape;
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[j * m + i] = g[i * n + j];
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::RowL2Normalize(a) => {
                let av = self.val(*a).clone();
                let cols = av.cols();
                let mut da = vec![0.0; av.len()];
                for i in 0..av.rows() {
                    let x = av.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n < EPS_NORM {
                        continue;
                    }
                    let denom = n + EPS_NORM;
                    let xg: f64 = x.iter().zip(gr).map(|(&xv, &gv)| xv * gv).sum();
                    let c = xg / (n * denom * denom);
                    for (j, d) in da[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                        *d = gr[j] / denom - x[j] * c;
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::RowSumNormalize(a, eps) => {
                let av = self.val(*a).clone();
                let cols = av.cols();
                let mut da = vec![0.0; av.len()];
                for i in 0..av.rows() {
                    let x = av.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let s = x.iter().sum::<f64>() + eps;
                    let gx: f64 = x.iter().zip(gr).map(|(&xv, &gv)| xv * gv).sum();
                    let c = gx / (s * s);
                    for (j, d) in da[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                        *d = gr[j] / s - c;
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::RowSum(a) => {
                let cols = self.val(*a).cols();
                let da: Vec<f64> = (0..self.val(*a).len()).map(|i| g[i / cols]).collect();
                self.accumulate(*a, &da);
            }
            Op::RowMean(a) => {
                let (m, n) = (self.val(*a).rows(), self.val(*a).cols());
                let inv = 1.0 / m as f64;
                let da: Vec<f64> = (0..m * n).map(|i| g[i % n] * inv).collect();
                self.accumulate(*a, &da);
            }
            Op::ColMax(a) => {
                let arg = aux.expect("col_max argmax");
                let (m, n) = (self.val(*a).rows(), self.val(*a).cols());
                let mut da = vec![0.0; m * n];
                for j in 0..n {
                    da[arg[j] as usize * n + j] = g[j];
                }
                self.accumulate(*a, &da);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.val(*a).len()];
                self.accumulate(*a, &da);
            }
            Op::ConcatRows(parts) => {
                let cols = out_shape.1;
                let mut off = 0;
                for &p in parts.clone().iter() {
                    let rows = self.val(p).rows();
                    let slice = g[off * cols..(off + rows) * cols].to_vec();
                    self.accumulate(p, &slice);
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = out_shape;
                let mut off = 0;
                for &p in parts.clone().iter() {
                    let pc = self.val(p).cols();
                    let mut dp = vec![0.0; rows * pc];
                    for i in 0..rows {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&g[i * cols + off..i * cols + off + pc]);
                    }
                    self.accumulate(p, &dp);
                    off += pc;
                }
            }
            Op::SliceRows(a, start, _) => {
                let cols = self.val(*a).cols();
                let mut da = vec![0.0; self.val(*a).len()];
                da[start * cols..start * cols + g.len()].copy_from_slice(g);
                self.accumulate(*a, &da);
            }
            Op::PoolRowsMean(a, windows) => {
                let cols = self.val(*a).cols();
                let mut da = vec![0.0; self.val(*a).len()];
                for (w, &(s, e)) in windows.iter().enumerate() {
                    let inv = 1.0 / (e - s) as f64;
                    let gr = &g[w * cols..(w + 1) * cols];
                    for i in s..e {
                        for (d, &gv) in da[i * cols..(i + 1) * cols].iter_mut().zip(gr) {
                            *d += gv * inv;
                        }
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::PoolRowsMax(a, _) => {
                let arg = aux.expect("pool_rows_max argmax");
                let mut da = vec![0.0; self.val(*a).len()];
                for (&src, &gv) in arg.iter().zip(g) {
                    da[src as usize] += gv;
                }
                self.accumulate(*a, &da);
            }
            Op::PoolBlocksMean(a, windows) => {
                let n = self.val(*a).cols();
                let w = windows.len();
                let mut da = vec![0.0; self.val(*a).len()];
                for (bi, &(rs, re)) in windows.iter().enumerate() {
                    for (bj, &(cs, ce)) in windows.iter().enumerate() {
                        let gv = g[bi * w + bj] / ((re - rs) * (ce - cs)) as f64;
                        for i in rs..re {
                            for d in &mut da[i * n + cs..i * n + ce] {
                                *d += gv;
                            }
                        }
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::PoolBlocksMax(a, _) => {
                let arg = aux.expect("pool_blocks_max argmax");
                let mut da = vec![0.0; self.val(*a).len()];
                for (&src, &gv) in arg.iter().zip(g) {
                    da[src as usize] += gv;
                }
                self.accumulate(*a, &da);
            }
            Op::MaeLoss(p, t) => {
                let inv = 1.0 / self.val(*p).len() as f64;
                let signs: Vec<f64> = self
                    .val(*p)
                    .data()
                    .iter()
                    .zip(self.val(*t).data())
                    .map(|(&pv, &tv)| {
                        let d = pv - tv;
                        if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.req(*p) {
                    let dp: Vec<f64> = signs.iter().map(|s| s * inv * g[0]).collect();
                    self.accumulate(*p, &dp);
                }
                if self.req(*t) {
                    let dt: Vec<f64> = signs.iter().map(|s| -s * inv * g[0]).collect();
                    self.accumulate(*t, &dt);
                }
            }
            Op::CausalConv1d(x, kernel, k) => {
                let xv = self.val(*x).clone();
                let kv = self.val(*kernel).clone();
                let (t_len, d_in, d_out) = (xv.rows(), xv.cols(), kv.cols());
                if self.req(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    for t in 0..t_len {
                        let gr = &g[t * d_out..(t + 1) * d_out];
                        for i in 0..(*k).min(t + 1) {
                            let dxt = &mut dx[(t - i) * d_in..(t - i + 1) * d_in];
                            for (p, d) in dxt.iter_mut().enumerate() {
                                let frow = kv.row(i * d_in + p);
                                *d += gr.iter().zip(frow).map(|(&gv, &f)| gv * f).sum::<f64>();
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.req(*kernel) {
                    let mut dk = vec![0.0; kv.len()];
                    for t in 0..t_len {
                        let gr = &g[t * d_out..(t + 1) * d_out];
                        for i in 0..(*k).min(t + 1) {
                            let xrow = xv.row(t - i);
                            for (p, &xval) in xrow.iter().enumerate() {
                                if xval == 0.0 {
                                    continue;
                                }
                                let dkr = &mut dk[(i * d_in + p) * d_out..(i * d_in + p + 1) * d_out];
                                for (d, &gv) in dkr.iter_mut().zip(gr) {
                                    *d += xval * gv;
                                }
                            }
                        }
                    }
                    self.accumulate(*kernel, &dk);
                }
            }
        }
        Ok(())
    }
}
