//! INI-style run configuration: `[section]` headers and `key = value`
//! lines, `#` or `;` comments. Unknown sections and keys are rejected by
//! name so typos fail loudly instead of silently using defaults.

use std::path::{Path, PathBuf};

use crate::adjacency::{
    AdjacencySpec, GdmParams, KnnParams, DEFAULT_ALPHA, DEFAULT_EPS, DEFAULT_GAMMA,
};
use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::gpfn::PoolKind;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Everything a CLI run needs; all fields start from defaults and are
/// overridden by the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    /// Fraction of the dataset used for training (rest is validation).
    pub train_fraction: f64,
    pub data_dir: Option<PathBuf>,
    pub bench_warmup: usize,
    pub bench_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            train_fraction: 0.8,
            data_dir: None,
            bench_warmup: 5,
            bench_iters: 30,
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key}: cannot parse value {v:?}"))
    })
}

fn parse_triple(section: &str, key: &str, v: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "[{section}] {key}: expected three comma-separated values, got {v:?}"
        )));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = parse(section, key, p)?;
    }
    Ok(out)
}

fn parse_triple_f64(section: &str, key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "[{section}] {key}: expected three comma-separated values, got {v:?}"
        )));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = parse(section, key, p)?;
    }
    Ok(out)
}

/// Adjacency kind plus its knobs, applied after all keys are read.
#[derive(Default)]
struct AdjacencyKeys {
    kind: Option<String>,
    lambda: Option<f64>,
    n: Option<usize>,
    alpha: Option<f64>,
    eps: Option<f64>,
    gamma: Option<f64>,
}

impl AdjacencyKeys {
    fn build(&self, current: AdjacencySpec) -> Result<AdjacencySpec> {
        let kind = match &self.kind {
            Some(k) => k.as_str(),
            None => {
                if self.lambda.is_some()
                    || self.n.is_some()
                    || self.alpha.is_some()
                    || self.eps.is_some()
                    || self.gamma.is_some()
                {
                    return Err(Error::Config(
                        "[adjacency] parameters given without a kind".into(),
                    ));
                }
                return Ok(current);
            }
        };
        Ok(match kind {
            "indirect" => AdjacencySpec::Indirect {
                eps: self.eps.unwrap_or(DEFAULT_EPS),
            },
            "gdm" => AdjacencySpec::Gdm(GdmParams {
                lambda: self.lambda.unwrap_or(GdmParams::default().lambda),
                n: self.n.unwrap_or(GdmParams::default().n),
            }),
            "knn" => AdjacencySpec::Knn(KnnParams {
                alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
                eps: self.eps.unwrap_or(DEFAULT_EPS),
            }),
            "direct" => AdjacencySpec::Direct {
                gamma: self.gamma.unwrap_or(DEFAULT_GAMMA),
            },
            "all-one" | "all_one" => AdjacencySpec::AllOne,
            other => {
                return Err(Error::Config(format!(
                    "[adjacency] kind: unknown kind {other:?} \
                     (expected indirect|gdm|knn|direct|all-one)"
                )))
            }
        })
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut adj = AdjacencyKeys::default();
    let mut section = String::new();
    let (mut synth_lengths_set, mut synth_dims_set) = (false, false);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            match section.as_str() {
                "model" | "adjacency" | "pooling" | "train" | "data" | "synth" | "bench" => {}
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{other}]",
                        lineno + 1
                    )))
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let unknown = || {
            Err(Error::Config(format!(
                "line {}: unknown key {key:?} in section [{section}]",
                lineno + 1
            )))
        };
        match section.as_str() {
            "model" => match key {
                "lengths" => cfg.model.lengths = parse_triple(&section, key, value)?,
                "dims" => cfg.model.dims = parse_triple(&section, key, value)?,
                "hidden" => cfg.model.hidden = parse(&section, key, value)?,
                "out" => cfg.model.out = parse(&section, key, value)?,
                "sage_layers" => cfg.model.sage_layers = parse(&section, key, value)?,
                "head_hidden" => cfg.model.head_hidden = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "adjacency" => match key {
                "kind" => adj.kind = Some(value.to_string()),
                "lambda" => adj.lambda = Some(parse(&section, key, value)?),
                "n" => adj.n = Some(parse(&section, key, value)?),
                "alpha" => adj.alpha = Some(parse(&section, key, value)?),
                "eps" => adj.eps = Some(parse(&section, key, value)?),
                "gamma" => adj.gamma = Some(parse(&section, key, value)?),
                _ => return unknown(),
            },
            "pooling" => match key {
                "kind" => {
                    cfg.model.pooling = match value {
                        "mean" => PoolKind::Mean,
                        "max" => PoolKind::Max,
                        "none" => PoolKind::None,
                        other => {
                            return Err(Error::Config(format!(
                                "[pooling] kind: unknown kind {other:?} (expected mean|max|none)"
                            )))
                        }
                    }
                }
                "size" => cfg.model.pool_size = parse(&section, key, value)?,
                "link_sim" => cfg.model.link_sim = parse(&section, key, value)?,
                "t_prime" => cfg.model.t_prime = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "train" => match key {
                "lr" => cfg.train.lr = parse(&section, key, value)?,
                "beta1" => cfg.train.beta1 = parse(&section, key, value)?,
                "beta2" => cfg.train.beta2 = parse(&section, key, value)?,
                "eps" => cfg.train.eps = parse(&section, key, value)?,
                "batch_size" => cfg.train.batch_size = parse(&section, key, value)?,
                "epochs" => cfg.train.epochs = parse(&section, key, value)?,
                "seed" => cfg.train.seed = parse(&section, key, value)?,
                "reg_weight" => cfg.train.reg_weight = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "data" => match key {
                "dir" => cfg.data_dir = Some(PathBuf::from(value)),
                "train_fraction" => cfg.train_fraction = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "synth" => match key {
                "lengths" => {
                    cfg.synth.lengths = parse_triple(&section, key, value)?;
                    synth_lengths_set = true;
                }
                "dims" => {
                    cfg.synth.dims = parse_triple(&section, key, value)?;
                    synth_dims_set = true;
                }
                "signal_channels" => {
                    cfg.synth.signal_channels = parse_triple(&section, key, value)?
                }
                "weights" => cfg.synth.weights = parse_triple_f64(&section, key, value)?,
                "sigma" => cfg.synth.sigma = parse(&section, key, value)?,
                "seed" => cfg.synth.seed = parse(&section, key, value)?,
                "count" => cfg.synth.count = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "bench" => match key {
                "warmup" => cfg.bench_warmup = parse(&section, key, value)?,
                "iters" => cfg.bench_iters = parse(&section, key, value)?,
                _ => return unknown(),
            },
            "" => {
                return Err(Error::Config(format!(
                    "line {}: key {key:?} before any [section]",
                    lineno + 1
                )))
            }
            _ => unreachable!("section names validated on entry"),
        }
    }
    cfg.model.adjacency = adj.build(cfg.model.adjacency)?;
    // keep the generator shape in sync with the model unless the file
    // overrides it explicitly
    if !synth_lengths_set {
        cfg.synth.lengths = cfg.model.lengths;
    }
    if !synth_dims_set {
        cfg.synth.dims = cfg.model.dims;
    }
    if !(0.0..1.0).contains(&cfg.train_fraction) || cfg.train_fraction == 0.0 {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
