//! Adam training loop and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{BatchGrads, Model};
use crate::tensor::pearson;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the direct-adjacency regularizer; ignored for other
    /// adjacency kinds.
    pub reg_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 7,
            reg_weight: crate::adjacency::DEFAULT_REG_WEIGHT,
        }
    }
}

/// Adam first/second moment accumulators, laid out like the parameter map.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let shapes: Vec<usize> = model.params.tensors.values().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One Adam update from an averaged batch gradient. Non-finite
    /// gradients abort rather than poisoning the moments.
    pub fn step(&mut self, model: &mut Model, grads: &BatchGrads, cfg: &TrainConfig) -> Result<()> {
        for ((name, _), g) in model.params.tensors.iter().zip(&grads.grads) {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((param, g), (m, v)) in model
            .params
            .tensors
            .values_mut()
            .zip(&grads.grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Evaluation metrics for sentiment regression in [-3, 3].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Binary accuracy: sign agreement, items with label exactly 0 excluded.
    pub acc2: f64,
    /// 7-class accuracy after clipping to [-3, 3] and rounding half away
    /// from zero.
    pub acc7: f64,
    /// F1 of the positive class under the binary split used by acc2.
    pub f1: f64,
    pub mae: f64,
    /// Pearson correlation; 0 with `corr_degenerate` set when either side
    /// has zero variance.
    pub corr: f64,
    pub corr_degenerate: bool,
}

fn round_half_away(v: f64) -> i32 {
    if v >= 0.0 {
        (v + 0.5).floor() as i32
    } else {
        (v - 0.5).ceil() as i32
    }
}

fn to_class(v: f64) -> i32 {
    round_half_away(v.clamp(-3.0, 3.0))
}

pub fn compute_metrics(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Empty("metrics input"));
    }
    let n = preds.len() as f64;
    let mae = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / n;
    let acc7 = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| to_class(**p) == to_class(**y))
        .count() as f64
        / n;

    // binary view over items with nonzero label
    let mut considered = 0usize;
    let mut agree = 0usize;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        if y == 0.0 {
            continue;
        }
        considered += 1;
        let pp = p > 0.0;
        let yp = y > 0.0;
        if pp == yp {
            agree += 1;
        }
        match (pp, yp) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let acc2 = if considered == 0 {
        0.0
    } else {
        agree as f64 / considered as f64
    };
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let (corr, corr_degenerate) = pearson(preds, labels);
    Ok(Metrics {
        acc2,
        acc7,
        f1,
        mae,
        corr,
        corr_degenerate,
    })
}

/// One line per epoch and split, consumed by the CLI's CSV log.
pub fn metrics_csv_line(epoch: usize, split: &str, m: &Metrics) -> String {
    format!(
        "{epoch},{split},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.acc2, m.acc7, m.f1, m.mae, m.corr
    )
}

pub struct FitReport {
    /// (epoch, split, metrics) rows in evaluation order.
    pub history: Vec<(usize, String, Metrics)>,
    /// Validation metrics of the kept (best val MAE) parameters.
    pub best_val: Metrics,
    pub best_epoch: usize,
}

/// Mini-batch Adam over shuffled epochs; keeps the parameters with the best
/// validation MAE. The shuffle order depends only on the training seed.
pub fn fit(
    model: &mut Model,
    train: &[Utterance],
    val: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Metrics, &Metrics),
) -> Result<FitReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation split"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let labels_val: Vec<f64> = val.iter().map(|u| u.label).collect();

    let eval_val = |model: &Model| -> Result<Metrics> {
        let preds = model.predict(val)?;
        compute_metrics(&preds, &labels_val)
    };

    let mut best_params = model.params.clone();
    let mut best_val = eval_val(model)?;
    let mut best_epoch = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_preds = Vec::with_capacity(train.len());
        let mut train_labels = Vec::with_capacity(train.len());
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Utterance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let grads = model.batch_backward(&batch, cfg.reg_weight)?;
            if !grads.loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            for (&i, &p) in chunk.iter().zip(&grads.preds) {
                train_preds.push(p);
                train_labels.push(train[i].label);
            }
            adam.step(model, &grads, cfg)?;
        }
        let train_m = compute_metrics(&train_preds, &train_labels)?;
        let val_m = eval_val(model)?;
        history.push((epoch, "train".to_string(), train_m));
        history.push((epoch, "val".to_string(), val_m));
        if val_m.mae < best_val.mae {
            best_val = val_m;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
        on_epoch(epoch, &train_m, &val_m);
    }
    model.params = best_params;
    Ok(FitReport {
        history,
        best_val,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::{AdjacencySpec, GdmParams};
    use crate::data::{synth_generate, SynthSpec};
    use crate::gpfn::PoolKind;
    use crate::model::ModelConfig;

    #[test]
    fn acc7_rounding_convention() {
        assert_eq!(to_class(2.5), 3);
        assert_eq!(to_class(-2.5), -3);
        assert_eq!(to_class(0.49), 0);
        assert_eq!(to_class(-0.5), -1);
        assert_eq!(to_class(7.0), 3); // clipped first
        assert_eq!(to_class(-7.0), -3);
    }

    #[test]
    fn perfect_predictions_max_all_metrics() {
        let y = [1.5, -2.0, 0.5, 3.0, -0.25];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!(m.acc2, 1.0);
        assert_eq!(m.acc7, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.mae, 0.0);
        assert!((m.corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_labels_excluded_from_binary_view() {
        // only the two nonzero labels count for acc2; one agrees
        let preds = [1.0, -1.0, 5.0];
        let labels = [2.0, 1.0, 0.0];
        let m = compute_metrics(&preds, &labels).unwrap();
        assert_eq!(m.acc2, 0.5);
    }

    #[test]
    fn f1_hand_value() {
        // tp=1 (p>0,y>0), fp=1, fn=1 -> f1 = 2/4
        let preds = [1.0, 1.0, -1.0, -1.0];
        let labels = [1.0, -1.0, 1.0, -1.0];
        let m = compute_metrics(&preds, &labels).unwrap();
        assert_eq!(m.f1, 0.5);
        assert_eq!(m.acc2, 0.5);
    }

    #[test]
    fn constant_predictions_flag_degenerate_corr() {
        let preds = [1.0, 1.0, 1.0];
        let labels = [0.5, 1.0, 2.0];
        let m = compute_metrics(&preds, &labels).unwrap();
        assert!(m.corr_degenerate);
        assert_eq!(m.corr, 0.0);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let preds = [0.3, -1.2, 2.0, 0.9];
        let labels = [0.5, -1.0, 2.5, -0.5];
        let a = compute_metrics(&preds, &labels).unwrap();
        let perm = [2usize, 0, 3, 1];
        let p2: Vec<f64> = perm.iter().map(|&i| preds[i]).collect();
        let l2: Vec<f64> = perm.iter().map(|&i| labels[i]).collect();
        let b = compute_metrics(&p2, &l2).unwrap();
        assert!((a.mae - b.mae).abs() < 1e-12);
        assert_eq!(a.acc2, b.acc2);
        assert_eq!(a.acc7, b.acc7);
        assert!((a.corr - b.corr).abs() < 1e-12);
    }

    fn tiny_setup() -> (Model, Vec<Utterance>, Vec<Utterance>) {
        let cfg = ModelConfig {
            lengths: [4, 6, 6],
            dims: [3, 3, 3],
            hidden: 4,
            out: 4,
            sage_layers: 1,
            head_hidden: 4,
            adjacency: AdjacencySpec::Gdm(GdmParams::default()),
            pooling: PoolKind::Mean,
            pool_size: 2,
            link_sim: false,
            t_prime: 0,
        };
        let model = Model::new(cfg, 11).unwrap();
        let data = synth_generate(&SynthSpec {
            lengths: [4, 6, 6],
            dims: [3, 3, 3],
            count: 24,
            sigma: 0.0,
            seed: 13,
            ..SynthSpec::default()
        })
        .unwrap();
        let (tr, va) = data.split_at(16);
        (model, tr.to_vec(), va.to_vec())
    }

    #[test]
    fn zero_epochs_keeps_initial_parameters() {
        let (mut model, tr, va) = tiny_setup();
        let before = model.params.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(model.params, before);
        assert!(report.history.is_empty());
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged_across_epochs() {
        let (mut model, tr, va) = tiny_setup();
        let before = model.params.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        fit(&mut model, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn adam_reduces_training_loss_on_a_tiny_problem() {
        let (mut model, tr, va) = tiny_setup();
        let initial = model.batch_backward(&tr, 0.0).unwrap().loss;
        let cfg = TrainConfig {
            lr: 0.01,
            epochs: 8,
            batch_size: 8,
            ..TrainConfig::default()
        };
        fit(&mut model, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        let after = model.batch_backward(&tr, 0.0).unwrap().loss;
        assert!(
            after < initial,
            "training loss did not improve: {initial} -> {after}"
        );
    }

    #[test]
    fn fit_is_deterministic_for_a_fixed_seed() {
        let run = || {
            let (mut model, tr, va) = tiny_setup();
            let cfg = TrainConfig {
                lr: 0.01,
                epochs: 3,
                batch_size: 8,
                ..TrainConfig::default()
            };
            fit(&mut model, &tr, &va, &cfg, |_, _, _| {}).unwrap();
            model.params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn best_checkpoint_has_best_val_mae_in_history() {
        let (mut model, tr, va) = tiny_setup();
        let cfg = TrainConfig {
            lr: 0.01,
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &tr, &va, &cfg, |_, _, _| {}).unwrap();
        for (_, split, m) in &report.history {
            if split == "val" {
                assert!(report.best_val.mae <= m.mae + 1e-12);
            }
        }
        // kept parameters actually reproduce the reported best val MAE
        let preds = model.predict(&va).unwrap();
        let labels: Vec<f64> = va.iter().map(|u| u.label).collect();
        let m = compute_metrics(&preds, &labels).unwrap();
        assert!((m.mae - report.best_val.mae).abs() < 1e-12);
    }

    #[test]
    fn csv_line_shape() {
        let m = compute_metrics(&[1.0, -1.0], &[1.0, -2.0]).unwrap();
        let line = metrics_csv_line(3, "val", &m);
        assert!(line.starts_with("3,val,"));
        assert_eq!(line.split(',').count(), 7);
    }
}
