use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evidx_harness::config::{DatasetSpec, ExperimentConfig};
use evidx_harness::harness::{run_experiment, run_upscale, verify_index, write_upscale_csv};
use evidx_harness::poc;
use evidx_core::builder::build_from_config;
use evidx_core::config::IndexConfig;
use evidx_core::genetic::{CostWeights, FitnessMode};
use evidx_core::workload::{self, Query, QueryMode, Workload};

#[derive(Parser)]
#[command(name = "evidx", version, about = "Genetic search for physical index configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a binary key file.
    GenData(GenDataArgs),
    /// Export the configured workload as CSV.
    GenWorkload(GenWorkloadArgs),
    /// Run baseline and genetic search.
    Search(SearchArgs),
    /// Rebuild found configs on larger datasets and compare.
    Upscale(UpscaleArgs),
    /// Compare lookup latency of a hand-built partitioned index and a B-tree.
    Poc(PocArgs),
    /// Check an index config for correctness on a dataset.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    UniDense,
    Skewed,
    /// Uniform sample of `--from`.
    Sample,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "uni-dense")]
    kind: DataKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_if_eq("kind", "sample"))]
    from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Experiment config plus the dataset overrides shared by several commands.
#[derive(Args)]
struct DataArgs {
    /// Experiment config; defaults apply where absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset size, overriding the config.
    #[arg(long)]
    n: Option<usize>,
}

impl DataArgs {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.n {
            cfg.dataset = cfg.dataset.with_size(n);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenWorkloadArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    generations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Use the deterministic cost model instead of wall-clock fitness.
    #[arg(long)]
    cost_model: bool,
}

#[derive(Args)]
struct UpscaleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Found config, usually `best_config.json`.
    #[arg(long)]
    best: PathBuf,
    /// Reference config, usually `initial_best_config.json`.
    #[arg(long)]
    initial: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PocArgs {
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    queries: usize,
    #[arg(long, default_value_t = 0.001)]
    sel: f64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra contender as NAME=CONFIG_PATH; repeatable.
    #[arg(long = "contender")]
    contenders: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Index config to rebuild and check.
    #[arg(long)]
    index: PathBuf,
    /// Sampled range pairs when the dataset is too large for the full grid.
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    /// Largest dataset checked exhaustively.
    #[arg(long, default_value_t = 2000)]
    exhaustive_limit: usize,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let d = match a.kind {
        DataKind::UniDense => workload::gen_uni_dense(a.n)?,
        DataKind::Skewed => workload::gen_skewed(a.n, a.seed)?,
        DataKind::Sample => {
            let from = a.from.as_deref().expect("required by clap");
            DatasetSpec::File { path: from.to_path_buf(), n: a.n, seed: a.seed }.load()?
        }
    };
    workload::write_keys(&a.out, d.keys())?;
    println!("wrote {} keys ({}) to {}", d.len(), d.name, a.out.display());
    Ok(())
}

fn gen_workload(a: GenWorkloadArgs) -> Result<()> {
    let cfg = a.data.experiment()?;
    let dataset = cfg.dataset.load()?;
    let seed = a.seed.unwrap_or(cfg.workload_seed);
    let w = Workload::generate(&dataset, &cfg.workload, cfg.query_mode, seed)?;
    let mut out = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    out.write_record(["position", "type", "l", "h"])?;
    for (i, q) in w.queries.iter().enumerate() {
        let (kind, l, h) = match *q {
            Query::Point { key } => ("point", key, key),
            Query::Range { l, h } => ("range", l, h),
        };
        out.write_record([i.to_string(), kind.to_string(), l.to_string(), h.to_string()])?;
    }
    out.flush()?;
    println!("wrote {} queries (fingerprint {:016x}) to {}", w.len(), w.fingerprint(), a.out.display());
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let mut cfg = a.data.experiment()?;
    cfg.apply_env();
    if let Some(g) = a.generations {
        cfg.genetic.generations = g;
    }
    if let Some(s) = a.seed {
        cfg.genetic.master_seed = s;
    }
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    if a.cost_model {
        cfg.fitness = FitnessMode::CostModel { weights: CostWeights::default() };
    }
    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    println!(
        "best {} ns ({:.3}x baseline {} ns, initial best {} ns), {} nodes, height {}; artifacts in {}",
        s.best_fitness_ns,
        s.ratio_to_baseline,
        s.baseline_fitness_ns,
        s.initial_best_fitness_ns,
        s.best_structure.nodes,
        s.best_structure.height,
        out.output_dir.display()
    );
    Ok(())
}

fn upscale(a: UpscaleArgs) -> Result<()> {
    let cfg = a.data.experiment()?;
    let best = IndexConfig::load(&a.best)?;
    let initial = IndexConfig::load(&a.initial)?;
    let rows = run_upscale(
        &best,
        &initial,
        &cfg.dataset,
        &cfg.workload,
        cfg.query_mode,
        cfg.workload_seed,
        &a.sizes,
        cfg.fitness,
        cfg.genetic.c,
    )?;
    write_upscale_csv(&a.out, &rows)?;
    for r in &rows {
        println!("{:>12} keys: best {} ns, initial {} ns, improvement {:.3}", r.size, r.best_fitness_ns, r.initial_fitness_ns, r.improvement);
    }
    Ok(())
}

fn load_contender(spec: &str, keys: &[u64]) -> Result<(String, evidx_core::physical::PhysicalIndex)> {
    let Some((name, path)) = spec.split_once('=') else {
        bail!("contender must be NAME=CONFIG_PATH, got {spec}");
    };
    let cfg = IndexConfig::load(Path::new(path))?;
    Ok((name.to_string(), build_from_config(&cfg, keys)?))
}

fn poc_cmd(a: PocArgs) -> Result<()> {
    let dataset = workload::gen_uni_dense(a.n)?;
    let w = Workload::generate(&dataset, &poc::three_partition_workload(a.queries, a.sel), QueryMode::LowerBound, a.seed)?;
    let mut contenders = vec![
        ("hand_spec".to_string(), poc::hand_spec(dataset.keys())?),
        ("uniform_btree".to_string(), poc::uniform_btree(dataset.keys())?),
    ];
    for c in &a.contenders {
        contenders.push(load_contender(c, dataset.keys())?);
    }
    let rows = poc::run_poc(&w, &contenders, a.runs, a.seed)?;
    poc::write_poc_csv(&a.out, &rows)?;
    for r in &rows {
        println!("{:<16} {:>10.1} ns/query (std {:.1})", r.contender, r.mean_ns_per_query, r.std_ns_per_query);
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let cfg = a.data.experiment()?;
    let dataset = cfg.dataset.load()?;
    let index = build_from_config(&IndexConfig::load(&a.index)?, dataset.keys())?;
    let report = verify_index(&index, dataset.keys(), a.pairs, a.exhaustive_limit, cfg.workload_seed);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some((l, h)) = report.counterexample {
        bail!("index is incorrect for range [{l}, {h}]");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::GenWorkload(a) => gen_workload(a),
        Command::Search(a) => search(a),
        Command::Upscale(a) => upscale(a),
        Command::Poc(a) => poc_cmd(a),
        Command::Verify(a) => verify(a),
    }
}
