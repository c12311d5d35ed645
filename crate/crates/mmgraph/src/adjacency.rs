//! Adjacency matrix construction for node-embedding sequences.
//!
//! Five constructors: indirect learning (cross-node attention, learnable and
//! instance-specific), generalized diagonal matrix (fixed banded decay),
//! KNN-style thresholded inverse distance (instance-specific, non-learnable),
//! direct learning (one trainable matrix shared across instances), and the
//! all-one baseline.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tape::{SparseRows, Tape, VarId};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_REG_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdmParams {
    /// Attenuation factor, > 1. Off-diagonal entries decay as (1/lambda)^|i-j|.
    pub lambda: f64,
    /// Truncation factor, >= 2. Entries at |i-j| >= n are zero.
    pub n: usize,
}

impl Default for GdmParams {
    fn default() -> Self {
        Self { lambda: 2.0, n: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    /// Threshold scale on the row-mean similarity; links below are cut.
    pub alpha: f64,
    pub eps: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            eps: DEFAULT_EPS,
        }
    }
}

/// Which adjacency constructor a graph uses. Learnable tensors for the
/// indirect and direct kinds live in the model parameter map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjacencySpec {
    Indirect { eps: f64 },
    Gdm(GdmParams),
    Knn(KnnParams),
    Direct { gamma: f64 },
    AllOne,
}

impl AdjacencySpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AdjacencySpec::Indirect { .. } => "indirect",
            AdjacencySpec::Gdm(_) => "gdm",
            AdjacencySpec::Knn(_) => "knn",
            AdjacencySpec::Direct { .. } => "direct",
            AdjacencySpec::AllOne => "all-one",
        }
    }
}

/// A constant adjacency with its precomputed propagation matrix
/// D^{-1}(A+I), stored row-sparse for banded kinds.
#[derive(Debug)]
pub struct FixedAdj {
    pub matrix: Tensor,
    pub prop: Arc<SparseRows>,
}

impl FixedAdj {
    pub fn new(matrix: Tensor) -> Self {
        assert_eq!(matrix.rows(), matrix.cols());
        let t = matrix.rows();
        let mut rows = Vec::with_capacity(t);
        for i in 0..t {
            let mut entries: Vec<(u32, f64)> = matrix
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v != 0.0 || j == i)
                .map(|(j, &v)| (j as u32, v + if j == i { 1.0 } else { 0.0 }))
                .collect();
            let deg: f64 = entries.iter().map(|&(_, v)| v).sum();
            for e in &mut entries {
                e.1 /= deg;
            }
            rows.push(entries);
        }
        let prop = Arc::new(SparseRows {
            n_rows: t,
            n_cols: t,
            rows,
        });
        Self { matrix, prop }
    }

    pub fn order(&self) -> usize {
        self.matrix.rows()
    }
}

/// Adjacency of one graph: either a tensor on the tape (learnable routes)
/// or a shared constant.
#[derive(Clone)]
pub enum Adjacency {
    Learned(VarId),
    Fixed(Arc<FixedAdj>),
}

impl Adjacency {
    pub fn order(&self, tape: &Tape) -> usize {
        match self {
            Adjacency::Learned(v) => tape.value(*v).rows(),
            Adjacency::Fixed(f) => f.order(),
        }
    }

    /// Materialize the matrix on the tape (constant leaf for fixed kinds).
    pub fn as_var(&self, tape: &mut Tape) -> VarId {
        match self {
            Adjacency::Learned(v) => *v,
            Adjacency::Fixed(f) => tape.constant(f.matrix.clone()),
        }
    }

    pub fn dense(&self, tape: &Tape) -> Tensor {
        match self {
            Adjacency::Learned(v) => tape.value(*v).clone(),
            Adjacency::Fixed(f) => f.matrix.clone(),
        }
    }
}

/// Learnable matrices of the indirect (cross-node attention) constructor,
/// already placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct IndirectVars {
    pub wq: VarId,
    pub wp: VarId,
    pub w1: VarId,
    pub w2: VarId,
    pub eps: f64,
}

/// Cross-node attention adjacency:
/// Q = relu(N Wq), P = relu(N Wp),
/// A_hat = relu(relu(Q W1) relu(P W2)^T), rows normalized by sum + eps.
pub fn build_indirect(tape: &mut Tape, nodes: VarId, p: &IndirectVars) -> Result<Adjacency> {
    let d = tape.value(nodes).cols();
    if tape.value(p.wq).rows() != d {
        return Err(shape_err(
            "build_indirect",
            format!("nodes width {d} vs wq {}x{}", tape.value(p.wq).rows(), tape.value(p.wq).cols()),
        ));
    }
    let q = tape.matmul(nodes, p.wq)?;
    let q = tape.relu(q);
    let pp = tape.matmul(nodes, p.wp)?;
    let pp = tape.relu(pp);
    let left = tape.matmul(q, p.w1)?;
    let left = tape.relu(left);
    let right = tape.matmul(pp, p.w2)?;
    let right = tape.relu(right);
    let right_t = tape.transpose(right);
    let raw = tape.matmul(left, right_t)?;
    let a_hat = tape.relu(raw);
    let a = tape.row_sum_normalize(a_hat, p.eps);
    Ok(Adjacency::Learned(a))
}

/// Banded Toeplitz adjacency: A_ij = (1/lambda)^|i-j| for |i-j| < n, else 0.
pub fn build_gdm(t: usize, p: &GdmParams) -> Arc<FixedAdj> {
    assert!(p.lambda > 1.0, "gdm lambda must be > 1");
    assert!(p.n >= 2, "gdm truncation must be >= 2");
    let decay = 1.0 / p.lambda;
    let mut m = Tensor::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let dist = i.abs_diff(j);
            if dist < p.n {
                m.set(i, j, decay.powi(dist as i32));
            }
        }
    }
    Arc::new(FixedAdj::new(m))
}

/// Number of stacked layers needed for every node to see the whole
/// sequence under GDM truncation n: ceil((T-1)/(n-1)).
pub fn gdm_full_coverage_layers(t: usize, n: usize) -> usize {
    assert!(t >= 1 && n >= 2);
    (t - 1).div_ceil(n - 1)
}

/// Thresholded inverse-Euclidean-distance adjacency. Self-similarity is
/// excluded from both the row mean and the output (the +I self-loop in the
/// convolution supplies the self connection). Rows are normalized to sum
/// to 1; all-cut rows stay zero.
pub fn build_knn(nodes: &Tensor, p: &KnnParams) -> Arc<FixedAdj> {
    let t = nodes.rows();
    assert!(t >= 2, "knn needs at least two nodes");
    let mut sim = Tensor::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            if i == j {
                continue;
            }
            let dist = nodes
                .row(i)
                .iter()
                .zip(nodes.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sim.set(i, j, 1.0 / (dist + p.eps));
        }
    }
    let mut a = Tensor::zeros(t, t);
    for i in 0..t {
        let mean = sim.row(i).iter().sum::<f64>() / (t - 1) as f64;
        let mut row_sum = 0.0;
        for j in 0..t {
            if i == j {
                continue;
            }
            let v = (sim.at(i, j) - p.alpha * mean).max(0.0);
            a.set(i, j, v);
            row_sum += v;
        }
        if row_sum > 0.0 {
            for j in 0..t {
                a.set(i, j, a.at(i, j) / row_sum);
            }
        }
    }
    Arc::new(FixedAdj::new(a))
}

/// Direct learning: A = relu(A_hat), A_hat a trainable matrix shared
/// across instances.
pub fn build_direct(tape: &mut Tape, a_hat: VarId) -> Adjacency {
    Adjacency::Learned(tape.relu(a_hat))
}

/// Eq-style regularizer on the raw learnable matrix:
/// sum_i (sum_j A_hat_ij)^2 + sum_i (sum_j relu(A_hat_ij) - gamma)^2.
pub fn direct_reg_loss(tape: &mut Tape, a_hat: VarId, gamma: f64) -> Result<VarId> {
    let signed = tape.row_sum(a_hat);
    let signed_sq = tape.square(signed);
    let term1 = tape.sum_all(signed_sq);
    let pos = tape.relu(a_hat);
    let mass = tape.row_sum(pos);
    let centered = tape.add_scalar(mass, -gamma);
    let centered_sq = tape.square(centered);
    let term2 = tape.sum_all(centered_sq);
    tape.add(term1, term2)
}

/// Fully connected baseline.
pub fn build_all_one(t: usize) -> Arc<FixedAdj> {
    Arc::new(FixedAdj::new(Tensor::new(t, t, vec![1.0; t * t])))
}

/// Write a matrix as CSV (one row per line, full float precision) and as an
/// 8-bit grayscale binary PGM heatmap with linear min-max scaling.
pub fn export_adjacency(matrix: &Tensor, csv_path: &Path, pgm_path: &Path) -> Result<()> {
    let mut csv = std::fs::File::create(csv_path)?;
    for i in 0..matrix.rows() {
        let line = matrix
            .row(i)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(csv, "{line}")?;
    }

    let lo = matrix.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = matrix.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut pgm = std::fs::File::create(pgm_path)?;
    write!(pgm, "P5\n{} {}\n255\n", matrix.cols(), matrix.rows())?;
    let bytes: Vec<u8> = matrix
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    pgm.write_all(&bytes)?;
    Ok(())
}
