//! Throughput comparison of three sequence encoders at matched hidden
//! width: the banded-adjacency graph pipeline, a causal temporal
//! convolution stack, and a strictly sequential tanh recurrence. Each arm
//! runs a full forward + backward pass per timed iteration.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjacency::{build_gdm, Adjacency, GdmParams};
use crate::error::Result;
use crate::graphconv::sage_layer;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Shared shape of all three arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchShape {
    /// Sequence length (sum of the three modality lengths).
    pub t: usize,
    pub d_in: usize,
    pub hidden: usize,
    /// Body depth: graph iterations / convolution layers. The recurrence
    /// is a single cell regardless (its cost scales with T, not depth).
    pub layers: usize,
    /// Convolution kernel width and graph band are matched: the
    /// convolution sees `kernel` steps, the graph band `n = kernel`.
    pub kernel: usize,
}

impl Default for BenchShape {
    fn default() -> Self {
        Self {
            t: 1050,
            d_in: 8,
            hidden: 32,
            layers: 2,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub name: String,
    pub median_ms: f64,
    /// Median absolute deviation of the per-iteration times, ms.
    pub mad_ms: f64,
    pub params: usize,
    pub iters: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Time `f` (a full forward+backward) and summarize with median and MAD.
fn time_arm(name: &str, params: usize, warmup: usize, iters: usize, mut f: impl FnMut()) -> BenchResult {
    for _ in 0..warmup {
        f();
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        f();
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = median(&times);
    let mut devs: Vec<f64> = times.iter().map(|t| (t - med).abs()).collect();
    devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BenchResult {
        name: name.to_string(),
        median_ms: med,
        mad_ms: median(&devs),
        params,
        iters,
    }
}

/// Parameters of one arm: body weights plus the scalar readout head.
pub struct ArmParams {
    body: Vec<Tensor>,
    head: Tensor,
}

impl ArmParams {
    pub fn count(&self) -> usize {
        self.body.iter().map(Tensor::len).sum::<usize>() + self.head.len()
    }
}

pub fn graph_params(shape: &BenchShape, rng: &mut ChaCha8Rng) -> ArmParams {
    let mut body = vec![Tensor::uniform(
        shape.d_in,
        shape.hidden,
        1.0 / (shape.d_in as f64).sqrt(),
        rng,
    )];
    for _ in 1..shape.layers {
        body.push(Tensor::uniform(
            shape.hidden,
            shape.hidden,
            1.0 / (shape.hidden as f64).sqrt(),
            rng,
        ));
    }
    let head = Tensor::uniform(shape.hidden, 1, 1.0, rng);
    ArmParams { body, head }
}

pub fn tcn_params(shape: &BenchShape, rng: &mut ChaCha8Rng) -> ArmParams {
    let mut body = vec![Tensor::uniform(
        shape.kernel * shape.d_in,
        shape.hidden,
        1.0 / ((shape.kernel * shape.d_in) as f64).sqrt(),
        rng,
    )];
    for _ in 1..shape.layers {
        body.push(Tensor::uniform(
            shape.kernel * shape.hidden,
            shape.hidden,
            1.0 / ((shape.kernel * shape.hidden) as f64).sqrt(),
            rng,
        ));
    }
    let head = Tensor::uniform(shape.hidden, 1, 1.0, rng);
    ArmParams { body, head }
}

pub fn rnn_params(shape: &BenchShape, rng: &mut ChaCha8Rng) -> ArmParams {
    let body = vec![
        Tensor::uniform(shape.d_in, shape.hidden, 1.0 / (shape.d_in as f64).sqrt(), rng),
        Tensor::uniform(
            shape.hidden,
            shape.hidden,
            1.0 / (shape.hidden as f64).sqrt(),
            rng,
        ),
        Tensor::zeros(1, shape.hidden),
    ];
    let head = Tensor::uniform(shape.hidden, 1, 1.0, rng);
    ArmParams { body, head }
}

fn bind(tape: &mut Tape, p: &ArmParams) -> (Vec<VarId>, VarId) {
    let body = p.body.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let head = tape.leaf(p.head.clone(), true);
    (body, head)
}

fn finish(tape: &mut Tape, hidden_seq: VarId, head: VarId) -> Result<f64> {
    let pooled = tape.row_mean(hidden_seq)?;
    let pred = tape.matmul(pooled, head)?;
    let target = tape.constant(Tensor::scalar(0.0));
    let loss = tape.mae_loss(pred, target)?;
    let out = tape.value(loss).item();
    tape.backward(loss)?;
    Ok(out)
}

/// Graph arm: GDM band adjacency with precomputed sparse propagation,
/// stacked graph convolution iterations (Eq.-style mean aggregation),
/// mean readout, scalar head.
pub fn graph_pass(x: &Tensor, adj: &Adjacency, p: &ArmParams) -> Result<f64> {
    let mut tape = Tape::new();
    let (body, head) = bind(&mut tape, p);
    let input = tape.leaf(x.clone(), false);
    let mut h = input;
    for &w in &body {
        h = sage_layer(&mut tape, h, adj, w)?;
    }
    finish(&mut tape, h, head)
}

/// Temporal convolution arm: `layers` causal convolutions with relu.
pub fn tcn_pass(x: &Tensor, k: usize, p: &ArmParams) -> Result<f64> {
    let mut tape = Tape::new();
    let (body, head) = bind(&mut tape, p);
    let input = tape.leaf(x.clone(), false);
    let mut h = input;
    for &w in &body {
        let c = tape.causal_conv1d(h, w, k)?;
        h = tape.relu(c);
    }
    finish(&mut tape, h, head)
}

/// Recurrent arm: h_t = tanh(x_t Wx + h_{t-1} Wh + b), one tape op chain
/// per step — inherently sequential.
pub fn rnn_pass(x: &Tensor, p: &ArmParams) -> Result<f64> {
    let mut tape = Tape::new();
    let (body, head) = bind(&mut tape, p);
    let (wx, wh, b) = (body[0], body[1], body[2]);
    let input = tape.leaf(x.clone(), false);
    let t_len = x.rows();
    let hidden = tape.value(wh).rows();
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xt = tape.slice_rows(input, t, t + 1)?;
        let xw = tape.matmul(xt, wx)?;
        let hw = tape.matmul(h, wh)?;
        let s = tape.add(xw, hw)?;
        let s = tape.add_row_broadcast(s, b)?;
        h = tape.tanh(s);
        steps.push(h);
    }
    let seq = tape.concat_rows(&steps)?;
    finish(&mut tape, seq, head)
}

/// Run all three arms. `warmup` and `iters` control the timing loop; the
/// returned results keep the arm order (graph, tcn, rnn).
pub fn run_bench(shape: &BenchShape, seed: u64, warmup: usize, iters: usize) -> Result<Vec<BenchResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(shape.t, shape.d_in, 1.0, &mut rng);
    let adj = Adjacency::Fixed(build_gdm(
        shape.t,
        &GdmParams {
            lambda: 2.0,
            n: shape.kernel,
        },
    ));
    let gp = graph_params(shape, &mut rng);
    let tp = tcn_params(shape, &mut rng);
    let rp = rnn_params(shape, &mut rng);

    // exercise each arm once so setup errors surface before timing
    graph_pass(&x, &adj, &gp)?;
    tcn_pass(&x, shape.kernel, &tp)?;
    rnn_pass(&x, &rp)?;

    let results = vec![
        time_arm("graph", gp.count(), warmup, iters, || {
            graph_pass(&x, &adj, &gp).unwrap();
        }),
        time_arm("tcn", tp.count(), warmup, iters, || {
            tcn_pass(&x, shape.kernel, &tp).unwrap();
        }),
        time_arm("rnn", rp.count(), warmup, iters, || {
            rnn_pass(&x, &rp).unwrap();
        }),
    ];
    Ok(results)
}

pub fn results_table(results: &[BenchResult]) -> String {
    let mut s = String::from("arm      median_ms  mad_ms   params\n");
    for r in results {
        s.push_str(&format!(
            "{:<8} {:>9.3} {:>7.3} {:>8}\n",
            r.name, r.median_ms, r.mad_ms, r.params
        ));
    }
    s
}

pub fn results_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("arm,median_ms,mad_ms,params,iters\n");
    for r in results {
        s.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.name, r.median_ms, r.mad_ms, r.params, r.iters
        ));
    }
    s
}
