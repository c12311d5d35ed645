//! Graph Pooling Fusion Network: cross-modal node sorting, fused-graph
//! adjacency, graph convolution, mean/max graph pooling, link-similarity
//! pooling and graph readout.

use std::sync::Arc;

use crate::adjacency::{Adjacency, FixedAdj};
use crate::error::{shape_err, Result};
use crate::graphconv::{encode, AdjacencyBuilder, GraphState, SageVars};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Fused multimodal graph with the index span of each modality in the
/// stacked node order (language, acoustic, visual).
pub struct FusedGraph {
    pub state: GraphState,
    pub ranges: [(usize, usize); 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
    None,
}

/// Assignment and embedding projections of link-similarity pooling.
#[derive(Debug, Clone, Copy)]
pub struct LinkSimVars {
    /// T x T' cluster assignment projection; T' < T.
    pub wz: VarId,
    /// d x d' embedding projection.
    pub ws: VarId,
}

/// Stack the three modality node sets in (language, acoustic, visual) order
/// and rebuild the adjacency from the stacked nodes with the configured
/// constructor.
pub fn node_sort(
    tape: &mut Tape,
    language: &GraphState,
    acoustic: &GraphState,
    visual: &GraphState,
    builder: &AdjacencyBuilder,
) -> Result<FusedGraph> {
    let t_l = tape.value(language.nodes).rows();
    let t_a = tape.value(acoustic.nodes).rows();
    let t_v = tape.value(visual.nodes).rows();
    let nodes = tape.concat_rows(&[language.nodes, acoustic.nodes, visual.nodes])?;
    let adj = builder.build(tape, nodes)?;
    Ok(FusedGraph {
        state: GraphState { nodes, adj },
        ranges: [(0, t_l), (t_l, t_l + t_a), (t_l + t_a, t_l + t_a + t_v)],
    })
}

/// Uniform non-overlapping windows of size `s`; a trailing partial window
/// keeps its actual extent.
pub fn uniform_windows(t: usize, s: usize) -> Vec<(usize, usize)> {
    assert!(s >= 1);
    let mut w = Vec::with_capacity(t.div_ceil(s));
    let mut start = 0;
    while start < t {
        w.push((start, (start + s).min(t)));
        start += s;
    }
    w
}

/// Windows of size `s` that never straddle a modality boundary: windowing
/// restarts at the start of each span.
pub fn aligned_windows(ranges: &[(usize, usize)], s: usize) -> Vec<(usize, usize)> {
    let mut w = Vec::new();
    for &(start, end) in ranges {
        let mut cur = start;
        while cur < end {
            w.push((cur, (cur + s).min(end)));
            cur += s;
        }
    }
    w
}

fn block_pool_fixed(m: &Tensor, windows: &[(usize, usize)], max: bool) -> Tensor {
    let w = windows.len();
    let mut out = Tensor::zeros(w, w);
    for (bi, &(rs, re)) in windows.iter().enumerate() {
        for (bj, &(cs, ce)) in windows.iter().enumerate() {
            let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
            for i in rs..re {
                for j in cs..ce {
                    if max {
                        acc = acc.max(m.at(i, j));
                    } else {
                        acc += m.at(i, j);
                    }
                }
            }
            if !max {
                acc /= ((re - rs) * (ce - cs)) as f64;
            }
            out.set(bi, bj, acc);
        }
    }
    out
}

fn pool(
    tape: &mut Tape,
    g: &GraphState,
    windows: &[(usize, usize)],
    kind: PoolKind,
) -> Result<GraphState> {
    let windows = Arc::new(windows.to_vec());
    let nodes = match kind {
        PoolKind::Mean => tape.pool_rows_mean(g.nodes, windows.clone())?,
        PoolKind::Max => tape.pool_rows_max(g.nodes, windows.clone())?,
        PoolKind::None => return Ok(g.clone()),
    };
    let adj = match &g.adj {
        Adjacency::Learned(a) => Adjacency::Learned(match kind {
            PoolKind::Mean => tape.pool_blocks_mean(*a, windows)?,
            PoolKind::Max => tape.pool_blocks_max(*a, windows)?,
            PoolKind::None => unreachable!(),
        }),
        Adjacency::Fixed(f) => Adjacency::Fixed(Arc::new(FixedAdj::new(block_pool_fixed(
            &f.matrix,
            &windows,
            kind == PoolKind::Max,
        )))),
    };
    Ok(GraphState { nodes, adj })
}

/// Non-overlapping 1D mean over node rows (Eq. 9-style) paired with 2D block
/// mean over the adjacency (Eq. 10-style).
pub fn mean_pool(tape: &mut Tape, g: &GraphState, windows: &[(usize, usize)]) -> Result<GraphState> {
    pool(tape, g, windows, PoolKind::Mean)
}

/// Elementwise max variant of `mean_pool`.
pub fn max_pool(tape: &mut Tape, g: &GraphState, windows: &[(usize, usize)]) -> Result<GraphState> {
    pool(tape, g, windows, PoolKind::Max)
}

/// Link-similarity pooling:
/// Z' = A A^T, Z = relu((Z' + A) Wz), S = relu(N Ws),
/// nodes <- Z^T S, adjacency <- Z^T A Z.
pub fn link_sim_pool(tape: &mut Tape, g: &GraphState, p: &LinkSimVars) -> Result<GraphState> {
    let a = g.adj.as_var(tape);
    let t = tape.value(a).rows();
    let wz = tape.value(p.wz);
    if wz.rows() != t {
        return Err(shape_err(
            "link_sim_pool",
            format!("adjacency order {t} vs wz {}x{}", wz.rows(), wz.cols()),
        ));
    }
    if wz.cols() >= t {
        return Err(shape_err(
            "link_sim_pool",
            format!("pooling must reduce: T'={} >= T={t}", wz.cols()),
        ));
    }
    let a_t = tape.transpose(a);
    let z_prime = tape.matmul(a, a_t)?;
    let zsum = tape.add(z_prime, a)?;
    let z_raw = tape.matmul(zsum, p.wz)?;
    let z = tape.relu(z_raw);
    let s_raw = tape.matmul(g.nodes, p.ws)?;
    let s = tape.relu(s_raw);
    let z_t = tape.transpose(z);
    let nodes = tape.matmul(z_t, s)?;
    let az = tape.matmul(a, z)?;
    let adj = tape.matmul(z_t, az)?;
    Ok(GraphState {
        nodes,
        adj: Adjacency::Learned(adj),
    })
}

/// GPFN pipeline settings. Both pooling stages are individually toggleable.
#[derive(Debug, Clone, Copy)]
pub struct GpfnSettings {
    pub pooling: PoolKind,
    pub pool_size: usize,
    pub link_sim: bool,
}

/// Full GPFN forward: node sort, fused adjacency, graph convolution,
/// mean/max pooling (windows aligned to modality spans), link-similarity
/// pooling, then mean-of-nodes readout. Output is 1 x d'.
pub fn gpfn_forward(
    tape: &mut Tape,
    language: &GraphState,
    acoustic: &GraphState,
    visual: &GraphState,
    builder: &AdjacencyBuilder,
    conv: &SageVars,
    link: Option<&LinkSimVars>,
    cfg: &GpfnSettings,
) -> Result<VarId> {
    gpfn_forward_traced(tape, language, acoustic, visual, builder, conv, link, cfg)
        .map(|(readout, _)| readout)
}

/// As `gpfn_forward`, additionally returning the fused graph as built before
/// pooling (for adjacency inspection/export).
#[allow(clippy::too_many_arguments)]
pub fn gpfn_forward_traced(
    tape: &mut Tape,
    language: &GraphState,
    acoustic: &GraphState,
    visual: &GraphState,
    builder: &AdjacencyBuilder,
    conv: &SageVars,
    link: Option<&LinkSimVars>,
    cfg: &GpfnSettings,
) -> Result<(VarId, FusedGraph)> {
    let fused = node_sort(tape, language, acoustic, visual, builder)?;
    let convolved = encode(tape, fused.state.nodes, &fused.state.adj, conv)?;
    let mut state = GraphState {
        nodes: convolved,
        adj: fused.state.adj.clone(),
    };
    if cfg.pooling != PoolKind::None && cfg.pool_size > 1 {
        let windows = aligned_windows(&fused.ranges, cfg.pool_size);
        state = pool(tape, &state, &windows, cfg.pooling)?;
    }
    if cfg.link_sim {
        let vars = link.expect("link_sim enabled without projection parameters");
        state = link_sim_pool(tape, &state, vars)?;
    }
    let readout = tape.row_mean(state.nodes)?;
    Ok((readout, fused))
}
