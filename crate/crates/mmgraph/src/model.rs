//! Full model assembly: three unimodal graph encoders, the graph pooling
//! fusion network, and a small regression head on the concatenated fused and
//! unimodal readouts. Parameters live in a named, ordered map so training,
//! checkpointing and gradient accumulation all agree on one ordering.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjacency::{
    build_all_one, build_gdm, direct_reg_loss, Adjacency, AdjacencySpec, FixedAdj, IndirectVars,
};
use crate::data::Utterance;
use crate::error::{shape_err, Error, Result};
use crate::gpfn::{aligned_windows, gpfn_forward_traced, GpfnSettings, LinkSimVars, PoolKind};
use crate::graphconv::{unimodal_encode, AdjacencyBuilder, SageVars};
use crate::parallel::map_items;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

pub const GRAPH_NAMES: [&str; 4] = ["language", "acoustic", "visual", "fused"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lengths: [usize; 3],
    pub dims: [usize; 3],
    /// Hidden width of each graph convolution iteration.
    pub hidden: usize,
    /// Node embedding width after the per-graph FC projection.
    pub out: usize,
    /// Graph convolution iterations per encoder.
    pub sage_layers: usize,
    pub head_hidden: usize,
    pub adjacency: AdjacencySpec,
    pub pooling: PoolKind,
    pub pool_size: usize,
    pub link_sim: bool,
    /// Cluster count of link-similarity pooling; 0 picks
    /// ceil(pooled_len / 4).
    pub t_prime: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lengths: [10, 40, 40],
            dims: [8, 8, 8],
            hidden: 32,
            out: 32,
            sage_layers: 2,
            head_hidden: 32,
            adjacency: AdjacencySpec::Gdm(Default::default()),
            pooling: PoolKind::Mean,
            pool_size: 2,
            link_sim: true,
            t_prime: 0,
        }
    }
}

impl ModelConfig {
    pub fn fused_len(&self) -> usize {
        self.lengths.iter().sum()
    }

    fn modality_ranges(&self) -> [(usize, usize); 3] {
        let [l, a, v] = self.lengths;
        [(0, l), (l, l + a), (l + a, l + a + v)]
    }

    /// Fused node count after the mean/max pooling stage.
    pub fn pooled_len(&self) -> usize {
        if self.pooling != PoolKind::None && self.pool_size > 1 {
            aligned_windows(&self.modality_ranges(), self.pool_size).len()
        } else {
            self.fused_len()
        }
    }

    pub fn effective_t_prime(&self) -> usize {
        if self.t_prime > 0 {
            self.t_prime
        } else {
            self.pooled_len().div_ceil(4).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in 0..3 {
            if self.lengths[m] == 0 || self.dims[m] == 0 {
                return Err(Error::Config(format!(
                    "{} must have nonzero length and width",
                    GRAPH_NAMES[m]
                )));
            }
        }
        if self.hidden == 0 || self.out == 0 || self.sage_layers == 0 || self.head_hidden == 0 {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be >= 1".into()));
        }
        if self.link_sim && self.effective_t_prime() >= self.pooled_len() {
            return Err(Error::Config(format!(
                "link similarity pooling must reduce: t_prime {} >= pooled length {}",
                self.effective_t_prime(),
                self.pooled_len()
            )));
        }
        Ok(())
    }
}

/// Ordered name -> tensor map. The iteration order fixes the layout of
/// gradient accumulators, optimizer state and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: IndexMap<String, Tensor>,
}

fn graph_input_width(cfg: &ModelConfig, g: usize) -> usize {
    if g < 3 {
        cfg.dims[g]
    } else {
        cfg.out
    }
}

fn graph_len(cfg: &ModelConfig, g: usize) -> usize {
    if g < 3 {
        cfg.lengths[g]
    } else {
        cfg.fused_len()
    }
}

impl ModelParams {
    /// Seeded init: weights Uniform(+-1/sqrt(fan_in)), biases zero, raw
    /// direct-adjacency matrices Uniform(+-0.1).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = IndexMap::new();
        fn w(
            t: &mut IndexMap<String, Tensor>,
            rng: &mut ChaCha8Rng,
            name: String,
            rows: usize,
            cols: usize,
        ) {
            let bound = 1.0 / (rows as f64).sqrt();
            t.insert(name, Tensor::uniform(rows, cols, bound, rng));
        }
        for (g, gname) in GRAPH_NAMES.iter().enumerate() {
            let d = graph_input_width(cfg, g);
            match cfg.adjacency {
                AdjacencySpec::Indirect { .. } => {
                    for part in ["wq", "wp", "w1", "w2"] {
                        w(&mut t, &mut rng, format!("adj.{gname}.{part}"), d, d);
                    }
                }
                AdjacencySpec::Direct { .. } => {
                    let n = graph_len(cfg, g);
                    t.insert(
                        format!("adj.{gname}.a_hat"),
                        Tensor::uniform(n, n, 0.1, &mut rng),
                    );
                }
                _ => {}
            }
            w(&mut t, &mut rng, format!("enc.{gname}.w1"), d, cfg.hidden);
            for k in 2..=cfg.sage_layers {
                w(&mut t, &mut rng, format!("enc.{gname}.w{k}"), cfg.hidden, cfg.hidden);
            }
            w(
                &mut t,
                &mut rng,
                format!("enc.{gname}.wo"),
                cfg.sage_layers * cfg.hidden,
                cfg.out,
            );
            t.insert(format!("enc.{gname}.bo"), Tensor::zeros(1, cfg.out));
        }
        if cfg.link_sim {
            w(
                &mut t,
                &mut rng,
                "pool.wz".into(),
                cfg.pooled_len(),
                cfg.effective_t_prime(),
            );
            w(&mut t, &mut rng, "pool.ws".into(), cfg.out, cfg.out);
        }
        w(&mut t, &mut rng, "head.w1".into(), 4 * cfg.out, cfg.head_hidden);
        t.insert("head.b1".into(), Tensor::zeros(1, cfg.head_hidden));
        w(&mut t, &mut rng, "head.w2".into(), cfg.head_hidden, 1);
        t.insert("head.b2".into(), Tensor::zeros(1, 1));
        Self { tensors: t }
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Owned version of the per-graph adjacency builder selection (the builder
/// type borrows `IndirectVars`).
enum OwnedBuilder {
    Indirect(IndirectVars),
    Fixed(Arc<FixedAdj>),
    Knn(crate::adjacency::KnnParams),
    Direct(VarId),
}

impl OwnedBuilder {
    fn as_builder(&self) -> AdjacencyBuilder<'_> {
        match self {
            OwnedBuilder::Indirect(v) => AdjacencyBuilder::Indirect(v),
            OwnedBuilder::Fixed(f) => AdjacencyBuilder::Fixed(f.clone()),
            OwnedBuilder::Knn(p) => AdjacencyBuilder::Knn(*p),
            OwnedBuilder::Direct(a) => AdjacencyBuilder::Direct(*a),
        }
    }
}

/// One forward pass: the prediction plus the four adjacency matrices as
/// built (unimodal graphs and the fused graph before pooling).
pub struct ItemTrace {
    pub pred: VarId,
    pub adjs: Vec<Adjacency>,
}

#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    /// Instance-independent adjacencies (GDM / all-one), one per graph.
    fixed: Vec<Option<Arc<FixedAdj>>>,
}

struct BoundParams {
    vars: Vec<VarId>,
}

impl BoundParams {
    fn get(&self, params: &ModelParams, name: &str) -> VarId {
        let idx = params
            .tensors
            .get_index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[idx]
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(&cfg, seed);
        Ok(Self::assemble(cfg, params))
    }

    fn assemble(cfg: ModelConfig, params: ModelParams) -> Self {
        let fixed = (0..4)
            .map(|g| {
                let t = graph_len(&cfg, g);
                match cfg.adjacency {
                    AdjacencySpec::Gdm(p) => Some(build_gdm(t, &p)),
                    AdjacencySpec::AllOne => Some(build_all_one(t)),
                    _ => None,
                }
            })
            .collect();
        Self { cfg, params, fixed }
    }

    /// Replace the parameters with a checkpointed set, verifying that every
    /// configured tensor is present with the right shape.
    pub fn set_params(&mut self, loaded: ModelParams) -> Result<()> {
        for (name, cur) in &self.params.tensors {
            match loaded.tensors.get(name) {
                None => {
                    return Err(Error::Checkpoint(format!("missing tensor {name}")));
                }
                Some(t) if !t.same_shape(cur) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name}: checkpoint is {}x{}, model expects {}x{}",
                        t.rows(),
                        t.cols(),
                        cur.rows(),
                        cur.cols()
                    )));
                }
                _ => {}
            }
        }
        if let Some((name, _)) = loaded
            .tensors
            .iter()
            .find(|(n, _)| !self.params.tensors.contains_key(*n))
        {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
        // keep the model's canonical ordering
        for (name, t) in loaded.tensors {
            self.params.tensors[&name] = t;
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .tensors
            .values()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        BoundParams { vars }
    }

    fn builder_for(&self, g: usize, bound: &BoundParams) -> OwnedBuilder {
        let gname = GRAPH_NAMES[g];
        match self.cfg.adjacency {
            AdjacencySpec::Indirect { eps } => OwnedBuilder::Indirect(IndirectVars {
                wq: bound.get(&self.params, &format!("adj.{gname}.wq")),
                wp: bound.get(&self.params, &format!("adj.{gname}.wp")),
                w1: bound.get(&self.params, &format!("adj.{gname}.w1")),
                w2: bound.get(&self.params, &format!("adj.{gname}.w2")),
                eps,
            }),
            AdjacencySpec::Gdm(_) | AdjacencySpec::AllOne => {
                OwnedBuilder::Fixed(self.fixed[g].as_ref().unwrap().clone())
            }
            AdjacencySpec::Knn(p) => OwnedBuilder::Knn(p),
            AdjacencySpec::Direct { .. } => {
                OwnedBuilder::Direct(bound.get(&self.params, &format!("adj.{gname}.a_hat")))
            }
        }
    }

    fn sage_for(&self, g: usize, bound: &BoundParams) -> SageVars {
        let gname = GRAPH_NAMES[g];
        SageVars {
            layers: (1..=self.cfg.sage_layers)
                .map(|k| bound.get(&self.params, &format!("enc.{gname}.w{k}")))
                .collect(),
            wo: bound.get(&self.params, &format!("enc.{gname}.wo")),
            bo: bound.get(&self.params, &format!("enc.{gname}.bo")),
        }
    }

    fn check_item(&self, item: &Utterance) -> Result<()> {
        for m in 0..3 {
            let t = item.modality(m);
            if t.rows() != self.cfg.lengths[m] || t.cols() != self.cfg.dims[m] {
                return Err(shape_err(
                    "forward",
                    format!(
                        "{} input is {}x{}, model expects {}x{}",
                        GRAPH_NAMES[m],
                        t.rows(),
                        t.cols(),
                        self.cfg.lengths[m],
                        self.cfg.dims[m]
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Build the whole computation for one item on the given tape.
    fn forward_on(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        item: &Utterance,
    ) -> Result<ItemTrace> {
        self.check_item(item)?;
        let mut states = Vec::with_capacity(3);
        let mut means = Vec::with_capacity(3);
        let mut adjs = Vec::with_capacity(4);
        for m in 0..3 {
            let seq = tape.leaf(item.modality(m).clone(), false);
            let builder = self.builder_for(m, bound);
            let state = unimodal_encode(tape, seq, &builder.as_builder(), &self.sage_for(m, bound))?;
            means.push(tape.row_mean(state.nodes)?);
            adjs.push(state.adj.clone());
            states.push(state);
        }
        let fused_builder = self.builder_for(3, bound);
        let link = if self.cfg.link_sim {
            Some(LinkSimVars {
                wz: bound.get(&self.params, "pool.wz"),
                ws: bound.get(&self.params, "pool.ws"),
            })
        } else {
            None
        };
        let settings = GpfnSettings {
            pooling: self.cfg.pooling,
            pool_size: self.cfg.pool_size,
            link_sim: self.cfg.link_sim,
        };
        let (readout, fused) = gpfn_forward_traced(
            tape,
            &states[0],
            &states[1],
            &states[2],
            &fused_builder.as_builder(),
            &self.sage_for(3, bound),
            link.as_ref(),
            &settings,
        )?;
        adjs.push(fused.state.adj.clone());

        let feat = tape.concat_cols(&[readout, means[0], means[1], means[2]])?;
        let h = tape.matmul(feat, bound.get(&self.params, "head.w1"))?;
        let h = tape.add_row_broadcast(h, bound.get(&self.params, "head.b1"))?;
        let h = tape.relu(h);
        let o = tape.matmul(h, bound.get(&self.params, "head.w2"))?;
        let pred = tape.add_row_broadcast(o, bound.get(&self.params, "head.b2"))?;
        Ok(ItemTrace { pred, adjs })
    }

    pub fn predict_one(&self, item: &Utterance) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let trace = self.forward_on(&mut tape, &bound, item)?;
        Ok(tape.value(trace.pred).item())
    }

    pub fn predict(&self, items: &[Utterance]) -> Result<Vec<f64>> {
        map_items(items, |it| self.predict_one(it))
            .into_iter()
            .collect()
    }

    /// Forward one item and return its four adjacency matrices, densified.
    pub fn adjacencies(&self, item: &Utterance) -> Result<Vec<(String, Tensor)>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let trace = self.forward_on(&mut tape, &bound, item)?;
        Ok(GRAPH_NAMES
            .iter()
            .zip(&trace.adjs)
            .map(|(name, adj)| (name.to_string(), adj.dense(&tape)))
            .collect())
    }

    /// Mean absolute error over a batch plus, for direct adjacency
    /// learning, the shared-matrix regularizer; gradients are averaged over
    /// items and folded in index order, so results are independent of the
    /// thread count.
    pub fn batch_backward(&self, items: &[Utterance], reg_weight: f64) -> Result<BatchGrads> {
        if items.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let per_item = map_items(items, |item| -> Result<(f64, f64, Vec<Option<Tensor>>)> {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, true);
            let trace = self.forward_on(&mut tape, &bound, item)?;
            let target = tape.constant(Tensor::scalar(item.label));
            let loss = tape.mae_loss(trace.pred, target)?;
            let pred = tape.value(trace.pred).item();
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::NonFinite("item loss".into()));
            }
            tape.backward(loss)?;
            let grads = bound.vars.iter().map(|&v| tape.grad(v)).collect();
            Ok((loss_val, pred, grads))
        });

        let n = items.len() as f64;
        let mut loss = 0.0;
        let mut preds = Vec::with_capacity(items.len());
        let mut grads: Vec<Tensor> = self
            .params
            .tensors
            .values()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        for res in per_item {
            let (l, p, g) = res?;
            loss += l / n;
            preds.push(p);
            for (acc, item_g) in grads.iter_mut().zip(g) {
                if let Some(item_g) = item_g {
                    for (a, b) in acc.data_mut().iter_mut().zip(item_g.data()) {
                        *a += b / n;
                    }
                }
            }
        }

        if let AdjacencySpec::Direct { gamma } = self.cfg.adjacency {
            if reg_weight > 0.0 {
                let mut tape = Tape::new();
                let bound = self.bind(&mut tape, true);
                let mut terms = Vec::with_capacity(4);
                for gname in GRAPH_NAMES {
                    let a_hat = bound.get(&self.params, &format!("adj.{gname}.a_hat"));
                    terms.push(direct_reg_loss(&mut tape, a_hat, gamma)?);
                }
                let mut total = terms[0];
                for &t in &terms[1..] {
                    total = tape.add(total, t)?;
                }
                let scaled = tape.scale(total, reg_weight);
                loss += tape.value(scaled).item();
                tape.backward(scaled)?;
                for (acc, &v) in grads.iter_mut().zip(&bound.vars) {
                    if let Some(g) = tape.grad(v) {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
            }
        }

        Ok(BatchGrads { loss, preds, grads })
    }
}

/// Averaged batch loss, per-item predictions, and gradients aligned with the
/// parameter map order.
pub struct BatchGrads {
    pub loss: f64,
    pub preds: Vec<f64>,
    pub grads: Vec<Tensor>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MMG1";

/// Binary checkpoint: magic, tensor count, then per tensor a length-prefixed
/// name and shape, then all payloads as little-endian f64 in table order.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &params.tensors {
        f.write_all(&(name.len() as u32).to_le_bytes())?;
        f.write_all(name.as_bytes())?;
        f.write_all(&(t.rows() as u64).to_le_bytes())?;
        f.write_all(&(t.cols() as u64).to_le_bytes())?;
    }
    for t in params.tensors.values() {
        for v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(f: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    f.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut f, &mut u32buf, "tensor count")?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut table = Vec::with_capacity(count);
    for i in 0..count {
        read_exact(&mut f, &mut u32buf, "name length")?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut f, &mut name, "tensor name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not utf-8")))?;
        let mut u64buf = [0u8; 8];
        read_exact(&mut f, &mut u64buf, "rows")?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        read_exact(&mut f, &mut u64buf, "cols")?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        table.push((name, rows, cols));
    }
    let mut tensors = IndexMap::with_capacity(count);
    for (name, rows, cols) in table {
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            read_exact(&mut f, &mut buf, &format!("payload of {name}"))?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.insert(name, Tensor::new(rows, cols, data));
    }
    Ok(ModelParams { tensors })
}

impl Model {
    pub fn load(cfg: ModelConfig, path: &Path) -> Result<Self> {
        cfg.validate()?;
        let mut model = Self::assemble(cfg.clone(), ModelParams::init(&cfg, 0));
        model.set_params(load_checkpoint(path)?)?;
        Ok(model)
    }
}
