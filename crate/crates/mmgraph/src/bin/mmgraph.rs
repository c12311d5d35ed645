use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmgraph::adjacency::export_adjacency;
use mmgraph::bench::{results_csv, results_table, run_bench, BenchShape};
use mmgraph::config::{load_config, RunConfig};
use mmgraph::data::{load_dataset, save_dataset, synth_generate, Utterance};
use mmgraph::error::{Error, Result};
use mmgraph::model::{save_checkpoint, Model};
use mmgraph::train::{compute_metrics, fit, metrics_csv_line};

#[derive(Parser)]
#[command(name = "mmgraph", about = "Graph-based multimodal sequence analysis")]
struct Cli {
    /// INI-style configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the generator seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints, logs and exports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset into the output directory.
    Synth,
    /// Train on the configured dataset (or freshly generated synthetic
    /// data) and write the best checkpoint plus a metrics log.
    Train,
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare encoder throughput at paper-shape sequence lengths.
    Bench,
    /// Write the four adjacency matrices of one utterance as CSV and PGM.
    ExportAdj {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset index of the utterance to trace.
        #[arg(long, default_value_t = 0)]
        item: usize,
    },
}

fn apply_threads_env() -> Result<()> {
    if let Ok(v) = std::env::var("MMGRAPH_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("MMGRAPH_THREADS: bad value {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("MMGRAPH_THREADS must be >= 1".into()));
        }
        if n == 1 {
            mmgraph::parallel::set_sequential(true);
        } else {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

/// Dataset from the configured directory, or generated in memory.
fn obtain_data(cfg: &RunConfig) -> Result<Vec<Utterance>> {
    match &cfg.data_dir {
        Some(dir) => load_dataset(dir, cfg.model.lengths),
        None => synth_generate(&cfg.synth),
    }
}

fn split_data(cfg: &RunConfig, data: &[Utterance]) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let n_train = ((data.len() as f64) * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train >= data.len() {
        return Err(Error::Config(format!(
            "train_fraction {} leaves an empty split for {} utterances",
            cfg.train_fraction,
            data.len()
        )));
    }
    let (tr, va) = data.split_at(n_train);
    Ok((tr.to_vec(), va.to_vec()))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = synth_generate(&cfg.synth)?;
    save_dataset(out, &data)?;
    println!("wrote {} utterances to {}", data.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let data = obtain_data(cfg)?;
    let (train, val) = split_data(cfg, &data)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    println!(
        "training {} parameters ({} adjacency) on {} train / {} val utterances",
        model.params.count_scalars(),
        cfg.model.adjacency.kind_name(),
        train.len(),
        val.len()
    );
    let mut log = String::from("epoch,split,acc2,acc7,f1,mae,corr\n");
    let report = fit(&mut model, &train, &val, &cfg.train, |epoch, tm, vm| {
        println!(
            "epoch {epoch}: train mae {:.4} | val mae {:.4} acc2 {:.4} corr {:.4}",
            tm.mae, vm.mae, vm.acc2, vm.corr
        );
    })?;
    for (epoch, split, m) in &report.history {
        log.push_str(&metrics_csv_line(*epoch, split, m));
        log.push('\n');
    }
    std::fs::write(out.join("train_log.csv"), log)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&model.params, &ckpt)?;
    println!(
        "best epoch {} val mae {:.4}; checkpoint written to {}",
        report.best_epoch,
        report.best_val.mae,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let data = obtain_data(cfg)?;
    let (_, val) = split_data(cfg, &data)?;
    let model = Model::load(cfg.model.clone(), checkpoint)?;
    let preds = model.predict(&val)?;
    let labels: Vec<f64> = val.iter().map(|u| u.label).collect();
    let m = compute_metrics(&preds, &labels)?;
    println!(
        "val: acc2 {:.4} acc7 {:.4} f1 {:.4} mae {:.4} corr {:.4}{}",
        m.acc2,
        m.acc7,
        m.f1,
        m.mae,
        m.corr,
        if m.corr_degenerate { " (degenerate)" } else { "" }
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let shape = BenchShape {
        t: 50 + 500 + 500,
        ..BenchShape::default()
    };
    let results = run_bench(&shape, cfg.train.seed, cfg.bench_warmup, cfg.bench_iters)?;
    print!("{}", results_table(&results));
    std::fs::write(out.join("bench.csv"), results_csv(&results))?;
    Ok(())
}

fn cmd_export_adj(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    item: usize,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let data = obtain_data(cfg)?;
    let utterance = data
        .get(item)
        .ok_or_else(|| Error::Config(format!("item {item} out of range ({} items)", data.len())))?;
    let model = match checkpoint {
        Some(path) => Model::load(cfg.model.clone(), path)?,
        None => Model::new(cfg.model.clone(), cfg.train.seed)?,
    };
    for (name, matrix) in model.adjacencies(utterance)? {
        let csv = out.join(format!("adj_{name}.csv"));
        let pgm = out.join(format!("adj_{name}.pgm"));
        export_adjacency(&matrix, &csv, &pgm)?;
        println!("wrote {} and {}", csv.display(), pgm.display());
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    apply_threads_env()?;
    let cfg = load_run_config(&cli)?;
    match &cli.cmd {
        Cmd::Synth => cmd_synth(&cfg, &cli.out),
        Cmd::Train => cmd_train(&cfg, &cli.out),
        Cmd::Eval { checkpoint } => cmd_eval(&cfg, checkpoint),
        Cmd::Bench => cmd_bench(&cfg, &cli.out),
        Cmd::ExportAdj { checkpoint, item } => {
            cmd_export_adj(&cfg, &cli.out, checkpoint.as_deref(), *item)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
