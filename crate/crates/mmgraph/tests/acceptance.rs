//! Acceptance gate. Nine pinned criteria, one test each, covering:
//! pooling link preservation, gradient correctness, structural oracles,
//! the direct-learning regularizer, end-to-end learning, throughput
//! ordering, and determinism. Each test prints a single PASS line on
//! success; an assertion message is the FAIL line.
//!
//! The tests share a lock so timing budgets are measured without
//! interference from sibling tests on loaded machines.

mod common;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmgraph::adjacency::{
    build_gdm, direct_reg_loss, gdm_full_coverage_layers, Adjacency, AdjacencySpec, FixedAdj,
    GdmParams, DEFAULT_EPS, DEFAULT_GAMMA,
};
use mmgraph::bench::{run_bench, BenchShape};
use mmgraph::data::{synth_generate, SynthSpec};
use mmgraph::gpfn::{max_pool, mean_pool, uniform_windows};
use mmgraph::graphconv::{propagate, GraphState};
use mmgraph::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use mmgraph::tape::{SparseRows, Tape, VarId};
use mmgraph::train::{fit, TrainConfig};
use mmgraph::Tensor;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn pass(n: usize, msg: &str) {
    println!("[PASS] criterion {n}: {msg}");
}

// ---------------------------------------------------------------- 1 ----

/// Random soft adjacency with the given edge density; weights in (0, 1].
fn random_soft_adj(t: usize, density: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut a = Tensor::zeros(t, t);
    for v in a.data_mut() {
        if rng.gen::<f64>() < density {
            *v = rng.gen_range(0.0..1.0) + 1e-9;
        }
    }
    a
}

#[test]
fn criterion_1_pooling_preserves_neighbor_links() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut violations = 0usize;
    let mut checked_edges = 0usize;
    for case in 0..1000 {
        let t = rng.gen_range(2..=20usize);
        let density = 0.1 * rng.gen_range(1..=9usize) as f64;
        let a = random_soft_adj(t, density, &mut rng);
        for s in [2usize, 3] {
            let windows = uniform_windows(t, s);
            // both adjacency representations: tape-tracked and fixed
            for fixed in [false, true] {
                let mut tape = Tape::new();
                let nodes = tape.leaf(Tensor::uniform(t, 3, 1.0, &mut rng), false);
                let adj = if fixed {
                    Adjacency::Fixed(Arc::new(FixedAdj::new(a.clone())))
                } else {
                    Adjacency::Learned(tape.leaf(a.clone(), false))
                };
                let g = GraphState { nodes, adj };
                for max in [false, true] {
                    let pooled = if max {
                        max_pool(&mut tape, &g, &windows).unwrap()
                    } else {
                        mean_pool(&mut tape, &g, &windows).unwrap()
                    };
                    let pa = pooled.adj.dense(&tape);
                    for i in 0..t {
                        for j in 0..t {
                            if a.at(i, j) > 0.0 {
                                checked_edges += 1;
                                if pa.at(i / s, j / s) <= 0.0 {
                                    violations += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        let _ = case;
    }
    assert_eq!(
        violations, 0,
        "[FAIL] criterion 1: {violations} neighbor-preservation violations"
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "[FAIL] criterion 1: runtime {elapsed:?} exceeds 10 s"
    );
    pass(
        1,
        &format!(
            "0 violations over 1000 matrices ({checked_edges} edges, mean+max, s in {{2,3}}) in {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------- 2 ----

/// Scalar loss: weighted sum of the op output with fixed seeded weights,
/// so the full output Jacobian is exercised.
fn weighted_loss(tape: &mut Tape, out: VarId, seed: u64) -> VarId {
    let shape = (tape.value(out).rows(), tape.value(out).cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(shape.0, shape.1, 1.0, &mut rng);
    let wv = tape.constant(w);
    let m = tape.mul(out, wv).unwrap();
    tape.sum_all(m)
}

/// Gradient-check one op: `build` maps the checked input variable to the
/// op output on a fresh tape. Returns the worst relative error.
fn check_op(name: &str, input: &Tensor, build: impl Fn(&mut Tape, VarId) -> VarId) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let out = build(&mut tape, x);
    let loss = weighted_loss(&mut tape, out, 99);
    tape.backward(loss).unwrap();
    let analytic = tape
        .grad(x)
        .unwrap_or_else(|| panic!("op {name}: no gradient reached the input"));
    let worst = common::gradcheck(input, &analytic, 1e-5, |p| {
        let mut t2 = Tape::new();
        let x2 = t2.leaf(p.clone(), false);
        let o2 = build(&mut t2, x2);
        let l2 = weighted_loss(&mut t2, o2, 99);
        t2.value(l2).item()
    });
    assert!(
        worst < 1e-4,
        "[FAIL] criterion 2: op {name} worst relative error {worst:.3e} >= 1e-4"
    );
    worst
}

/// Entries uniform in +-1 but pushed away from zero (relu kinks, divisions).
fn offset_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(rows, cols, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < 0.2 {
            *v += if *v >= 0.0 { 0.25 } else { -0.25 };
        }
    }
    t
}

fn per_op_gradchecks(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    let mut run = |name: &str, input: &Tensor, build: &dyn Fn(&mut Tape, VarId) -> VarId| {
        worst = worst.max(check_op(name, input, build));
    };

    let a34 = offset_uniform(3, 4, rng);
    let b42 = offset_uniform(4, 2, rng);
    run("matmul (lhs)", &a34, &|t, x| {
        let b = t.constant(b42.clone());
        t.matmul(x, b).unwrap()
    });
    run("matmul (rhs)", &b42, &|t, x| {
        let a = t.constant(a34.clone());
        t.matmul(a, x).unwrap()
    });

    let band = build_gdm(5, &GdmParams::default()).matrix.clone();
    let sparse = Arc::new(SparseRows::from_dense(&band));
    let x53 = offset_uniform(5, 3, rng);
    run("sparse_mul", &x53, &|t, x| {
        t.sparse_mul(sparse.clone(), x).unwrap()
    });

    let a33 = offset_uniform(3, 3, rng);
    let b33 = offset_uniform(3, 3, rng);
    run("add", &a33, &|t, x| {
        let b = t.constant(b33.clone());
        t.add(x, b).unwrap()
    });
    run("sub", &a33, &|t, x| {
        let b = t.constant(b33.clone());
        t.sub(x, b).unwrap()
    });
    run("mul (lhs)", &a33, &|t, x| {
        let b = t.constant(b33.clone());
        t.mul(x, b).unwrap()
    });
    run("mul (rhs)", &b33, &|t, x| {
        let a = t.constant(a33.clone());
        t.mul(a, x).unwrap()
    });
    run("scale", &a33, &|t, x| t.scale(x, 1.7));
    run("add_scalar", &a33, &|t, x| t.add_scalar(x, 0.3));
    run("relu", &a33, &|t, x| t.relu(x));
    run("tanh", &a33, &|t, x| t.tanh(x));
    run("square", &a33, &|t, x| t.square(x));
    run("transpose", &a34, &|t, x| t.transpose(x));

    let a43 = offset_uniform(4, 3, rng);
    let bias = offset_uniform(1, 3, rng);
    run("add_row_broadcast (matrix)", &a43, &|t, x| {
        let b = t.constant(bias.clone());
        t.add_row_broadcast(x, b).unwrap()
    });
    run("add_row_broadcast (bias)", &bias, &|t, x| {
        let a = t.constant(a43.clone());
        t.add_row_broadcast(a, x).unwrap()
    });

    let mut denom = Tensor::uniform(4, 1, 0.5, rng);
    for v in denom.data_mut() {
        *v = v.abs() + 0.5;
    }
    run("div_col_broadcast (numerator)", &a43, &|t, x| {
        let d = t.constant(denom.clone());
        t.div_col_broadcast(x, d).unwrap()
    });
    run("div_col_broadcast (denominator)", &denom, &|t, x| {
        let a = t.constant(a43.clone());
        t.div_col_broadcast(a, x).unwrap()
    });

    run("row_l2_normalize", &a43, &|t, x| t.row_l2_normalize(x));
    let mut positive = Tensor::uniform(4, 3, 0.4, rng);
    for v in positive.data_mut() {
        *v = v.abs() + 0.2;
    }
    run("row_sum_normalize", &positive, &|t, x| {
        t.row_sum_normalize(x, DEFAULT_EPS)
    });
    run("row_sum", &a43, &|t, x| t.row_sum(x));
    run("row_mean", &a43, &|t, x| t.row_mean(x).unwrap());
    run("col_max", &a43, &|t, x| t.col_max(x).unwrap());
    run("sum_all", &a43, &|t, x| t.sum_all(x));

    run("concat_rows", &a33, &|t, x| {
        let b = t.constant(b33.clone());
        t.concat_rows(&[x, b]).unwrap()
    });
    run("concat_cols", &a33, &|t, x| {
        let b = t.constant(b33.clone());
        t.concat_cols(&[b, x]).unwrap()
    });
    run("slice_rows", &a43, &|t, x| t.slice_rows(x, 1, 3).unwrap());

    let a63 = offset_uniform(6, 3, rng);
    let windows = Arc::new(uniform_windows(6, 2));
    run("pool_rows_mean", &a63, &|t, x| {
        t.pool_rows_mean(x, windows.clone()).unwrap()
    });
    run("pool_rows_max", &a63, &|t, x| {
        t.pool_rows_max(x, windows.clone()).unwrap()
    });
    let a66 = offset_uniform(6, 6, rng);
    run("pool_blocks_mean", &a66, &|t, x| {
        t.pool_blocks_mean(x, windows.clone()).unwrap()
    });
    run("pool_blocks_max", &a66, &|t, x| {
        t.pool_blocks_max(x, windows.clone()).unwrap()
    });

    let pred = offset_uniform(3, 1, rng);
    run("mae_loss", &pred, &|t, x| {
        let target = t.constant(Tensor::new(3, 1, vec![5.0, -5.0, 5.0]));
        t.mae_loss(x, target).unwrap()
    });

    let x62 = offset_uniform(6, 2, rng);
    let kernel = offset_uniform(3 * 2, 2, rng);
    run("causal_conv1d (input)", &x62, &|t, x| {
        let k = t.constant(kernel.clone());
        t.causal_conv1d(x, k, 3).unwrap()
    });
    run("causal_conv1d (kernel)", &kernel, &|t, x| {
        let xv = t.constant(x62.clone());
        t.causal_conv1d(xv, x, 3).unwrap()
    });

    worst
}

/// Finite-difference check of every parameter tensor of a full model on a
/// two-item batch. Returns the worst relative error.
fn model_gradcheck(cfg: ModelConfig, reg_weight: f64) -> f64 {
    let spec = SynthSpec {
        lengths: cfg.lengths,
        dims: cfg.dims,
        count: 2,
        sigma: 0.0,
        seed: 3,
        ..SynthSpec::default()
    };
    let items = synth_generate(&spec).unwrap();
    let mut base = Model::new(cfg.clone(), 11).unwrap();
    // jitter every parameter to a generic point: zero-initialized biases
    // can otherwise land relu pre-activations exactly on the kink, where
    // finite differences are undefined
    {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = base.params.clone();
        for t in params.tensors.values_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        base.set_params(params).unwrap();
    }
    let grads = base.batch_backward(&items, reg_weight).unwrap();
    let mut probe = Model::new(cfg, 11).unwrap();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = base.params.tensors.keys().cloned().collect();
    for (idx, name) in names.iter().enumerate() {
        let tensor = base.params.tensors[name].clone();
        let err = common::gradcheck(&tensor, &grads.grads[idx], 1e-5, |p| {
            let mut params = base.params.clone();
            params.tensors[name] = p.clone();
            probe.set_params(params).unwrap();
            probe.batch_backward(&items, reg_weight).unwrap().loss
        });
        assert!(
            err < 1e-3,
            "[FAIL] criterion 2: model parameter {name} worst relative error {err:.3e} >= 1e-3"
        );
        worst = worst.max(err);
    }
    worst
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let worst_op = per_op_gradchecks(&mut rng);

    let tiny = ModelConfig {
        lengths: [3, 4, 4],
        dims: [3, 3, 3],
        hidden: 4,
        out: 4,
        sage_layers: 1,
        head_hidden: 4,
        ..ModelConfig::default()
    };
    let mut worst_model: f64 = 0.0;
    for (cfg, reg) in [
        (
            ModelConfig {
                adjacency: AdjacencySpec::Indirect { eps: DEFAULT_EPS },
                ..tiny.clone()
            },
            0.0,
        ),
        (
            ModelConfig {
                adjacency: AdjacencySpec::Gdm(GdmParams::default()),
                ..tiny.clone()
            },
            0.0,
        ),
        (
            ModelConfig {
                adjacency: AdjacencySpec::Direct {
                    gamma: DEFAULT_GAMMA,
                },
                ..tiny.clone()
            },
            0.01,
        ),
    ] {
        worst_model = worst_model.max(model_gradcheck(cfg, reg));
    }

    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "[FAIL] criterion 2: runtime {elapsed:?} exceeds 60 s"
    );
    pass(
        2,
        &format!(
            "per-op worst rel err {worst_op:.2e} (< 1e-4), end-to-end worst {worst_model:.2e} (< 1e-3) in {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_3_link_similarity_matches_common_neighbor_oracle() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = rng.gen_range(1..=15usize);
        let density = 0.1 * rng.gen_range(1..=9usize) as f64;
        let a = random_soft_adj(t, density, &mut rng);

        // matrix form as used by link-similarity pooling: Z' = A A^T
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone(), false);
        let at = tape.transpose(av);
        let z = tape.matmul(av, at).unwrap();
        let z = tape.value(z).clone();

        // triple-loop common-neighbor oracle
        for i in 0..t {
            for j in 0..t {
                let mut acc = 0.0;
                for k in 0..t {
                    acc += a.at(i, k) * a.at(j, k);
                }
                worst = worst.max((z.at(i, j) - acc).abs());
            }
        }
    }
    assert!(
        worst <= 1e-10,
        "[FAIL] criterion 3: worst deviation {worst:.3e} > 1e-10"
    );
    pass(
        3,
        &format!("matrix form == triple-loop oracle on 200 graphs, worst deviation {worst:.2e}"),
    );
}

// ---------------------------------------------------------------- 4 ----

/// Eccentricity-style oracle: smallest hop count after which every node's
/// neighborhood in the band graph (|i-j| < n) covers the whole sequence.
fn bfs_coverage_layers(t: usize, n: usize) -> usize {
    let mut worst = 0usize;
    for src in 0..t {
        let mut dist = vec![usize::MAX; t];
        dist[src] = 0;
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(i) = queue.pop_front() {
            for j in 0..t {
                if i != j && i.abs_diff(j) < n && dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        worst = worst.max(*dist.iter().max().unwrap());
    }
    worst
}

#[test]
fn criterion_4_gdm_coverage_matches_bfs_oracle() {
    let _guard = serial();
    for t in 1..=30usize {
        for n in 2..=10usize {
            let formula = gdm_full_coverage_layers(t, n);
            let oracle = bfs_coverage_layers(t, n);
            assert_eq!(
                formula, oracle,
                "[FAIL] criterion 4: T={t} n={n}: formula {formula} != BFS oracle {oracle}"
            );
        }
    }
    assert_eq!(
        gdm_full_coverage_layers(500, 3),
        250,
        "[FAIL] criterion 4: (T=500, n=3) != 250"
    );
    pass(4, "formula == BFS oracle for all T <= 30, 2 <= n <= 10; (500,3) -> 250");
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_5_soft_weight_matrix_form_matches_per_node_form() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(2..=12usize);
        let d = rng.gen_range(1..=5usize);
        let d_out = rng.gen_range(1..=4usize);
        let a = random_soft_adj(t, 0.1 * rng.gen_range(1..=9usize) as f64, &mut rng);
        let n = Tensor::uniform(t, d, 2.0, &mut rng);
        let w = Tensor::uniform(d, d_out, 1.0, &mut rng);

        // matrix form: D^-1 (A + I) N W via the propagation op
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone(), false);
        let nv = tape.leaf(n.clone(), false);
        let prop = propagate(&mut tape, &Adjacency::Learned(av), nv).unwrap();
        let wv = tape.constant(w.clone());
        let out = tape.matmul(prop, wv).unwrap();
        let out = tape.value(out).clone();

        // per-node form: for each node, the soft-weighted neighbor average
        // (self-loop included), then the shared projection
        for i in 0..t {
            let mut deg = 0.0;
            for j in 0..t {
                deg += a.at(i, j) + if i == j { 1.0 } else { 0.0 };
            }
            let mut h = vec![0.0; d];
            for j in 0..t {
                let wgt = a.at(i, j) + if i == j { 1.0 } else { 0.0 };
                for c in 0..d {
                    h[c] += wgt * n.at(j, c);
                }
            }
            for c in 0..d_out {
                let mut o = 0.0;
                for k in 0..d {
                    o += (h[k] / deg) * w.at(k, c);
                }
                worst = worst.max((out.at(i, c) - o).abs());
            }
        }
    }
    assert!(
        worst <= 1e-10,
        "[FAIL] criterion 5: worst deviation {worst:.3e} > 1e-10"
    );
    pass(
        5,
        &format!("matrix vs per-node GCN outputs agree on 100 instances, worst deviation {worst:.2e}"),
    );
}

// ---------------------------------------------------------------- 6 ----

#[test]
fn criterion_6_direct_regularizer_reaches_its_constraints() {
    let _guard = serial();
    let t = 8;
    let gamma = DEFAULT_GAMMA;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut a_hat = Tensor::uniform(t, t, 0.1, &mut rng);
    let (mut m, mut v) = (Tensor::zeros(t, t), Tensor::zeros(t, t));
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8);
    for step in 1..=2000 {
        let mut tape = Tape::new();
        let x = tape.leaf(a_hat.clone(), true);
        let loss = direct_reg_loss(&mut tape, x, gamma).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        let bc1 = 1.0 - b1.powi(step);
        let bc2 = 1.0 - b2.powi(step);
        for i in 0..a_hat.len() {
            let gi = g.data()[i];
            m.data_mut()[i] = b1 * m.data()[i] + (1.0 - b1) * gi;
            v.data_mut()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            let update = lr * (m.data()[i] / bc1) / ((v.data()[i] / bc2).sqrt() + eps);
            a_hat.data_mut()[i] -= update;
        }
    }
    let mut worst_signed: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for i in 0..t {
        let signed: f64 = a_hat.row(i).iter().sum();
        let mass: f64 = a_hat.row(i).iter().map(|x| x.max(0.0)).sum();
        worst_signed = worst_signed.max(signed.abs());
        worst_mass = worst_mass.max((mass - gamma).abs());
    }
    assert!(
        worst_signed < 1e-3,
        "[FAIL] criterion 6: worst per-row |signed sum| {worst_signed:.3e} >= 1e-3"
    );
    assert!(
        worst_mass < 1e-3,
        "[FAIL] criterion 6: worst per-row |positive mass - gamma| {worst_mass:.3e} >= 1e-3"
    );
    pass(
        6,
        &format!(
            "after 2000 steps: |signed sum| <= {worst_signed:.2e}, |positive mass - gamma| <= {worst_mass:.2e}"
        ),
    );
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_end_to_end_learning_beats_baseline_with_ablation_ordering() {
    let _guard = serial();
    let start = Instant::now();
    let spec = SynthSpec::default(); // sigma 0.05, 1000 utterances, seed 7
    let data = synth_generate(&spec).unwrap();
    let (train, val) = data.split_at(800);

    let mean = train.iter().map(|u| u.label).sum::<f64>() / train.len() as f64;
    let baseline =
        val.iter().map(|u| (u.label - mean).abs()).sum::<f64>() / val.len() as f64;
    assert!(
        baseline >= 0.8,
        "[FAIL] criterion 7: constant-baseline val MAE {baseline:.4} < 0.8"
    );

    let arms = [
        ("indirect", AdjacencySpec::Indirect { eps: DEFAULT_EPS }),
        ("gdm", AdjacencySpec::Gdm(GdmParams::default())),
        ("all-one", AdjacencySpec::AllOne),
    ];
    let mut maes = Vec::new();
    for (name, adjacency) in arms {
        let cfg = ModelConfig {
            adjacency,
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg, 7).unwrap();
        let tc = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, train, val, &tc, |_, _, _| {}).unwrap();
        maes.push((name, report.best_val.mae));
    }
    let (indirect, gdm, all_one) = (maes[0].1, maes[1].1, maes[2].1);
    assert!(
        indirect < 0.15,
        "[FAIL] criterion 7: trained val MAE {indirect:.4} >= 0.15"
    );
    assert!(
        indirect <= gdm && gdm <= all_one,
        "[FAIL] criterion 7: ablation ordering violated: indirect {indirect:.4}, gdm {gdm:.4}, all-one {all_one:.4}"
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(600),
        "[FAIL] criterion 7: runtime {elapsed:?} exceeds 10 min"
    );
    pass(
        7,
        &format!(
            "val MAE indirect {indirect:.4} <= gdm {gdm:.4} <= all-one {all_one:.4}; baseline {baseline:.4} >= 0.8; {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_throughput_ordering_at_paper_shape() {
    let _guard = serial();
    let shape = BenchShape {
        t: 50 + 500 + 500,
        ..BenchShape::default()
    };
    let results = run_bench(&shape, 7, 3, 15).unwrap();
    let median = |name: &str| {
        results
            .iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("missing bench arm {name}"))
            .median_ms
    };
    let (graph, tcn, rnn) = (median("graph"), median("tcn"), median("rnn"));
    assert!(
        graph < rnn,
        "[FAIL] criterion 8: graph median {graph:.3} ms not faster than recurrent {rnn:.3} ms"
    );
    assert!(
        graph <= 2.0 * tcn,
        "[FAIL] criterion 8: graph median {graph:.3} ms exceeds 2x TCN {tcn:.3} ms"
    );
    pass(
        8,
        &format!("fwd+bwd medians: graph {graph:.3} ms < rnn {rnn:.3} ms, graph <= 2x tcn ({tcn:.3} ms)"),
    );
}

// ---------------------------------------------------------------- 9 ----

#[test]
fn criterion_9_training_and_checkpoints_are_deterministic() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        count: 60,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec).unwrap();
    let (train, val) = data.split_at(48);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };

    let mut paths = Vec::new();
    for run in 0..2 {
        let mut model = Model::new(ModelConfig::default(), 7).unwrap();
        fit(&mut model, train, val, &tc, |_, _, _| {}).unwrap();
        let path = dir.path().join(format!("run{run}.ckpt"));
        save_checkpoint(&model.params, &path).unwrap();
        paths.push(path);
    }
    let bytes_a = std::fs::read(&paths[0]).unwrap();
    let bytes_b = std::fs::read(&paths[1]).unwrap();
    assert_eq!(
        bytes_a, bytes_b,
        "[FAIL] criterion 9: repeated training produced different checkpoints"
    );

    let reloaded = load_checkpoint(&paths[0]).unwrap();
    let resaved = dir.path().join("resaved.ckpt");
    save_checkpoint(&reloaded, &resaved).unwrap();
    let bytes_c = std::fs::read(&resaved).unwrap();
    assert_eq!(
        bytes_a, bytes_c,
        "[FAIL] criterion 9: save/load round trip changed checkpoint bytes"
    );
    pass(
        9,
        &format!(
            "two identical training runs and a save/load round trip are bitwise identical ({} bytes)",
            bytes_a.len()
        ),
    );
}
