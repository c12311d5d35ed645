//! Unimodal graph convolutional encoder: GraphSAGE with mean pooling over
//! (nodes, adjacency), iteration concatenation and an FC projection.

use std::sync::Arc;

use crate::adjacency::{
    build_direct, build_indirect, build_knn, Adjacency, FixedAdj, IndirectVars, KnnParams,
};
use crate::error::Result;
use crate::tape::{Tape, VarId};

/// A graph mid-pipeline: node embeddings paired with their adjacency.
#[derive(Clone)]
pub struct GraphState {
    pub nodes: VarId,
    pub adj: Adjacency,
}

/// Per-graph convolution parameters on the tape: one weight matrix per
/// iteration plus the projection applied to the concatenated iterations.
#[derive(Debug, Clone)]
pub struct SageVars {
    pub layers: Vec<VarId>,
    pub wo: VarId,
    pub bo: VarId,
}

/// How to obtain the adjacency for a graph from its node embeddings.
#[derive(Clone)]
pub enum AdjacencyBuilder<'a> {
    Indirect(&'a IndirectVars),
    /// GDM or all-one: shared constant, independent of the instance.
    Fixed(Arc<FixedAdj>),
    /// KNN: rebuilt from the instance's node values, not learnable.
    Knn(KnnParams),
    /// Direct learning: the raw trainable matrix on the tape.
    Direct(VarId),
}

impl AdjacencyBuilder<'_> {
    pub fn build(&self, tape: &mut Tape, nodes: VarId) -> Result<Adjacency> {
        match self {
            AdjacencyBuilder::Indirect(vars) => build_indirect(tape, nodes, vars),
            AdjacencyBuilder::Fixed(f) => Ok(Adjacency::Fixed(f.clone())),
            AdjacencyBuilder::Knn(p) => Ok(Adjacency::Fixed(build_knn(tape.value(nodes), p))),
            AdjacencyBuilder::Direct(a_hat) => Ok(build_direct(tape, *a_hat)),
        }
    }
}

/// Mean aggregation D^{-1}(A+I) N with D the degree matrix of (A+I), so
/// isolated nodes keep a well-defined degree of at least one.
pub fn propagate(tape: &mut Tape, adj: &Adjacency, nodes: VarId) -> Result<VarId> {
    match adj {
        Adjacency::Fixed(f) => tape.sparse_mul(f.prop.clone(), nodes),
        Adjacency::Learned(a) => {
            let t = tape.value(*a).rows();
            let eye = tape.constant(crate::tensor::Tensor::identity(t));
            let with_loop = tape.add(*a, eye)?;
            let deg = tape.row_sum(with_loop);
            let agg = tape.matmul(with_loop, nodes)?;
            tape.div_col_broadcast(agg, deg)
        }
    }
}

/// One GraphSAGE iteration: relu(D^{-1}(A+I) N W), rows L2-normalized.
pub fn sage_layer(tape: &mut Tape, nodes: VarId, adj: &Adjacency, wk: VarId) -> Result<VarId> {
    let agg = propagate(tape, adj, nodes)?;
    let h = tape.matmul(agg, wk)?;
    let h = tape.relu(h);
    Ok(tape.row_l2_normalize(h))
}

/// Run all iterations over a fixed adjacency, concatenate the per-iteration
/// hidden states per node and apply the FC projection with relu.
pub fn encode(tape: &mut Tape, nodes: VarId, adj: &Adjacency, p: &SageVars) -> Result<VarId> {
    assert!(!p.layers.is_empty(), "at least one sage iteration");
    let mut h = nodes;
    let mut iterations = Vec::with_capacity(p.layers.len());
    for &wk in &p.layers {
        h = sage_layer(tape, h, adj, wk)?;
        iterations.push(h);
    }
    let cat = tape.concat_cols(&iterations)?;
    let proj = tape.matmul(cat, p.wo)?;
    let proj = tape.add_row_broadcast(proj, p.bo)?;
    Ok(tape.relu(proj))
}

/// Full unimodal encoder: the adjacency is built exactly once from the input
/// sequence and reused across all iterations.
pub fn unimodal_encode(
    tape: &mut Tape,
    seq: VarId,
    builder: &AdjacencyBuilder,
    p: &SageVars,
) -> Result<GraphState> {
    let adj = builder.build(tape, seq)?;
    let nodes = encode(tape, seq, &adj, p)?;
    Ok(GraphState { nodes, adj })
}
