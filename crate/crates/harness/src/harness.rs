//! Experiment runs, upscaling and verification.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evidx_core::builder::{build_from_config, build_single_node, bulkload, BulkloadSpec};
use evidx_core::config::IndexConfig;
use evidx_core::genetic::{genetic_search, Evaluator, FitnessMode, FitnessRecord, Member, Outcome, SearchStats, TraceRow};
use evidx_core::layout::DataLayout;
use evidx_core::model::key_grid;
use evidx_core::physical::{PhysicalIndex, RangeOracle, DEFAULT_CAPACITY};
use evidx_core::search::SearchMethod;
use evidx_core::workload::{Dataset, QueryMode, Workload, WorkloadSpec};
use evidx_core::Key;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{BaselineSpec, DatasetSpec, ExperimentConfig};

/// Version of every CSV and JSON artifact layout.
pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

pub const TRACE_FILE: &str = "trace.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.json";
pub const INITIAL_BEST_CONFIG_FILE: &str = "initial_best_config.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const UPSCALE_FILE: &str = "upscale.csv";

/// Shape and physical choices of an index, for reports and assertions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub nodes: usize,
    pub leaves: usize,
    pub height: usize,
    /// Layouts in use, routing stores included.
    pub layouts: BTreeSet<DataLayout>,
    pub searches: BTreeSet<SearchMethod>,
}

impl Structure {
    pub fn of(index: &PhysicalIndex) -> Self {
        let mut s = Structure {
            nodes: 0,
            leaves: 0,
            height: index.height(),
            layouts: BTreeSet::new(),
            searches: BTreeSet::new(),
        };
        for r in index.nodes() {
            s.nodes += 1;
            s.leaves += usize::from(r.node.is_leaf());
            if let Some((layout, search)) = r.node.active_pair() {
                s.layouts.insert(layout);
                s.searches.insert(search);
            }
        }
        s
    }

    pub fn is_single_hash(&self) -> bool {
        self.nodes == 1 && self.layouts.iter().eq([DataLayout::Hash].iter())
    }

    pub fn is_sorted_col_only(&self) -> bool {
        self.layouts.iter().all(|l| *l == DataLayout::SortedCol)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub schema_version: u32,
    pub baseline: BaselineSpec,
    pub structure: Structure,
    pub fitness: FitnessRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub dataset: String,
    pub dataset_size: usize,
    pub dataset_fingerprint: u64,
    pub workload_fingerprint: u64,
    pub queries: usize,
    pub generations: u64,
    pub master_seed: u64,
    pub fitness_mode: FitnessMode,
    pub baseline_fitness_ns: u64,
    pub initial_best_fitness_ns: u64,
    pub best_fitness_ns: u64,
    /// Best fitness divided by baseline fitness.
    pub ratio_to_baseline: f64,
    pub best_generation: u64,
    pub best_structural_hash: u64,
    pub best_structure: Structure,
    pub stats: SearchStats,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub best: PhysicalIndex,
    pub best_config: IndexConfig,
    pub initial_best_config: IndexConfig,
    pub trace: Vec<TraceRow>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct TraceCsvRow {
    generation: u64,
    best_fitness_ns: u64,
    population_size: usize,
    mutation_kind_applied: &'static str,
    admitted_flag: u8,
    outcome: &'static str,
    mutant_fitness_ns: Option<u64>,
}

impl From<&TraceRow> for TraceCsvRow {
    fn from(r: &TraceRow) -> Self {
        TraceCsvRow {
            generation: r.generation,
            best_fitness_ns: r.best_fitness_ns,
            population_size: r.population_size,
            mutation_kind_applied: r.mutation_kind.map_or("none", |k| k.name()),
            admitted_flag: u8::from(r.admitted),
            outcome: match r.outcome {
                Outcome::Admitted => "admitted",
                Outcome::Rejected => "rejected",
                Outcome::Duplicate => "duplicate",
                Outcome::Aborted => "aborted",
                Outcome::Protected => "protected",
            },
            mutant_fitness_ns: r.mutant_fitness_ns,
        }
    }
}

/// Capacity that lets a single node hold the whole dataset.
pub fn capacity_for(n: usize) -> usize {
    DEFAULT_CAPACITY.max(n)
}

pub fn build_baseline(spec: &BaselineSpec, keys: &[Key]) -> Result<PhysicalIndex> {
    let n = keys.len();
    Ok(match spec {
        BaselineSpec::SingleHash => build_single_node(keys, DataLayout::Hash, SearchMethod::HashS, capacity_for(n))?,
        BaselineSpec::BulkloadedBtree { leaf_count, fanout, layout, search } => {
            let leaves = (*leaf_count).clamp(1, n.max(1));
            let spec = BulkloadSpec {
                leaf_count: leaves,
                leaf_fill: n.div_ceil(leaves).max(1),
                fanout: *fanout,
                physical: evidx_core::builder::PhysicalChoice::Fixed { layout: *layout, search: *search },
                capacity: capacity_for(n),
            };
            bulkload(keys, &spec)?
        }
        BaselineSpec::HandSpec { path } => build_from_config(&IndexConfig::load(path)?, keys)?,
    })
}

fn save_config(member: &Member, dataset: &Dataset, path: &Path) -> Result<IndexConfig> {
    let mut cfg = member.index.to_config();
    cfg.metadata.dataset_fingerprint = Some(dataset.fingerprint());
    cfg.metadata.generation = Some(member.born);
    cfg.metadata.fitness_ns = Some(member.fitness.median_ns as f64);
    cfg.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs baseline and search and writes all artifacts to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let dataset = cfg.dataset.load()?;
    let workload = Workload::generate(&dataset, &cfg.workload, cfg.query_mode, cfg.workload_seed)?;
    let mut evaluator = Evaluator::new(workload, cfg.fitness, cfg.genetic.c, cfg.genetic.master_seed ^ 0x5eed);

    let baseline = build_baseline(&cfg.baseline, dataset.keys())?;
    let baseline_fitness = evaluator.evaluate(&baseline).context("evaluating the baseline")?;
    write_json(
        &out.join(BASELINE_FILE),
        &BaselineRecord {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            baseline: cfg.baseline.clone(),
            structure: Structure::of(&baseline),
            fitness: baseline_fitness.clone(),
        },
    )?;

    let trace_path = out.join(TRACE_FILE);
    let mut trace_csv = csv::WriterBuilder::new().has_headers(false).from_path(&trace_path).with_context(|| format!("writing {}", trace_path.display()))?;
    trace_csv.write_record([
        "generation",
        "best_fitness_ns",
        "population_size",
        "mutation_kind_applied",
        "admitted_flag",
        "outcome",
        "mutant_fitness_ns",
    ])?;
    let mut csv_error = None;
    let result = genetic_search(&cfg.genetic, dataset.keys(), &cfg.distributions, &mut evaluator, |row| {
        if csv_error.is_none() {
            if let Err(e) = trace_csv.serialize(TraceCsvRow::from(row)) {
                csv_error = Some(e);
            }
        }
    })
    .context("genetic search")?;
    if let Some(e) = csv_error {
        return Err(e.into());
    }
    trace_csv.flush()?;

    let best_config = save_config(&result.best, &dataset, &out.join(BEST_CONFIG_FILE))?;
    let initial_best_config = save_config(&result.initial_best, &dataset, &out.join(INITIAL_BEST_CONFIG_FILE))?;
    let summary = ExperimentSummary {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        dataset_size: dataset.len(),
        dataset_fingerprint: dataset.fingerprint(),
        workload_fingerprint: evaluator.workload().fingerprint(),
        queries: evaluator.workload().len(),
        generations: cfg.genetic.generations,
        master_seed: cfg.genetic.master_seed,
        fitness_mode: cfg.fitness,
        baseline_fitness_ns: baseline_fitness.median_ns,
        initial_best_fitness_ns: result.initial_best.fitness.median_ns,
        best_fitness_ns: result.best.fitness.median_ns,
        ratio_to_baseline: result.best.fitness.median_ns as f64 / baseline_fitness.median_ns.max(1) as f64,
        best_generation: result.best.born,
        best_structural_hash: result.best.hash,
        best_structure: Structure::of(&result.best.index),
        stats: result.stats.clone(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;

    if !cfg.upscale_sizes.is_empty() {
        let rows = run_upscale(
            &best_config,
            &initial_best_config,
            &cfg.dataset,
            &cfg.workload,
            cfg.query_mode,
            cfg.workload_seed,
            &cfg.upscale_sizes,
            cfg.fitness,
            cfg.genetic.c,
        )?;
        write_upscale_csv(&out.join(UPSCALE_FILE), &rows)?;
    }

    Ok(ExperimentOutcome {
        summary,
        best: result.best.index,
        best_config,
        initial_best_config,
        trace: result.trace,
        output_dir: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpscaleRow {
    pub size: usize,
    pub best_fitness_ns: u64,
    pub initial_fitness_ns: u64,
    /// `1 - best / initial`; positive when the found config is faster.
    pub improvement: f64,
    pub checked_pairs: usize,
}

/// Rebuilds the found and the initial-population best configs at each size,
/// checks correctness on sampled range pairs and measures both.
#[allow(clippy::too_many_arguments)]
pub fn run_upscale(
    best: &IndexConfig,
    initial: &IndexConfig,
    dataset: &DatasetSpec,
    workload: &WorkloadSpec,
    mode: QueryMode,
    workload_seed: u64,
    sizes: &[usize],
    fitness: FitnessMode,
    c: usize,
) -> Result<Vec<UpscaleRow>> {
    const PAIRS: usize = 10_000;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let data = dataset.with_size(size).load()?;
        let found = build_from_config(best, data.keys()).with_context(|| format!("rebuilding best config at {size}"))?;
        let init = build_from_config(initial, data.keys()).with_context(|| format!("rebuilding initial config at {size}"))?;
        let oracle = RangeOracle::new(data.keys());
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        for (name, index) in [("best", &found), ("initial", &init)] {
            if let Some((l, h)) = oracle.sampled_counterexample(index, PAIRS, &mut rng) {
                bail!("upscaled {name} config is incorrect at size {size} for range [{l}, {h}]");
            }
        }
        let w = Workload::generate(&data, workload, mode, workload_seed)?;
        let mut ev = Evaluator::new(w, fitness, c, size as u64);
        let best_ns = ev.measure(&found)?.median_ns;
        let initial_ns = ev.measure(&init)?.median_ns;
        rows.push(UpscaleRow {
            size,
            best_fitness_ns: best_ns,
            initial_fitness_ns: initial_ns,
            improvement: 1.0 - best_ns as f64 / initial_ns.max(1) as f64,
            checked_pairs: PAIRS,
        });
    }
    Ok(rows)
}

pub fn write_upscale_csv(path: &Path, rows: &[UpscaleRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    w.write_record(["size", "best_fitness_ns", "initial_fitness_ns", "improvement", "checked_pairs"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub size: usize,
    pub exhaustive: bool,
    pub pairs_checked: usize,
    /// First failing `(l, h)`, if any.
    pub counterexample: Option<(Key, Key)>,
}

/// Exhaustive grid check up to `exhaustive_limit` keys, sampled pairs above.
pub fn verify_index(index: &PhysicalIndex, keys: &[Key], pairs: usize, exhaustive_limit: usize, seed: u64) -> VerifyReport {
    let oracle = RangeOracle::new(keys);
    if keys.len() <= exhaustive_limit {
        let g = key_grid(keys).len();
        VerifyReport {
            size: keys.len(),
            exhaustive: true,
            pairs_checked: g * (g + 1) / 2,
            counterexample: oracle.grid_counterexample(index),
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VerifyReport {
            size: keys.len(),
            exhaustive: false,
            pairs_checked: pairs,
            counterexample: oracle.sampled_counterexample(index, pairs, &mut rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evidx_core::genetic::CostWeights;
    use evidx_core::workload::Domain;

    fn cost_config(dir: &Path, generations: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            dataset: DatasetSpec::UniDense { n: 2000 },
            workload: WorkloadSpec::Point { domain: Domain::FULL, count: 300 },
            fitness: FitnessMode::CostModel { weights: CostWeights::default() },
            output_dir: dir.to_path_buf(),
            ..Default::default()
        };
        cfg.genetic.generations = generations;
        cfg.genetic.initial_leaves = 20;
        cfg.genetic.initial_fanout = 4;
        cfg.genetic.c = 1;
        cfg
    }

    #[test]
    fn structure_of_single_hash() {
        let keys: Vec<Key> = (0..100).collect();
        let idx = build_baseline(&BaselineSpec::SingleHash, &keys).unwrap();
        let s = Structure::of(&idx);
        assert!(s.is_single_hash());
        assert!(!s.is_sorted_col_only());
    }

    #[test]
    fn zero_generations_writes_initial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cost_config(dir.path(), 0)).unwrap();
        assert!(out.trace.is_empty());
        for f in [TRACE_FILE, BEST_CONFIG_FILE, INITIAL_BEST_CONFIG_FILE, BASELINE_FILE, SUMMARY_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let trace = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
        assert_eq!(trace.lines().count(), 1);
        assert_eq!(out.best_config.structural_hash(), out.initial_best_config.structural_hash());
    }

    #[test]
    fn cost_model_artifacts_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cost_config(a.path(), 15)).unwrap();
        run_experiment(&cost_config(b.path(), 15)).unwrap();
        for f in [TRACE_FILE, BEST_CONFIG_FILE, INITIAL_BEST_CONFIG_FILE, SUMMARY_FILE] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
    }

    #[test]
    fn trace_best_column_never_increases() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cost_config(dir.path(), 20)).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join(TRACE_FILE)).unwrap();
        assert_eq!(r.headers().unwrap().get(1), Some("best_fitness_ns"));
        let best: Vec<u64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
        assert_eq!(best.len(), 200);
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn upscale_rebuilds_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cost_config(dir.path(), 10);
        cfg.upscale_sizes = vec![2000, 8000];
        let out = run_experiment(&cfg).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join(UPSCALE_FILE)).unwrap();
        let rows: Vec<UpscaleRow> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].best_fitness_ns, out.summary.best_fitness_ns);
        assert_eq!(rows[0].initial_fitness_ns, out.summary.initial_best_fitness_ns);
    }

    #[test]
    fn verify_reports_broken_index() {
        let keys: Vec<Key> = (0..300).map(|k| k * 3).collect();
        let good = build_baseline(&BaselineSpec::SingleHash, &keys).unwrap();
        assert_eq!(verify_index(&good, &keys, 1000, 500, 0).counterexample, None);
        let bad = build_baseline(&BaselineSpec::SingleHash, &keys[1..]).unwrap();
        assert!(verify_index(&bad, &keys, 1000, 500, 0).counterexample.is_some());
        assert!(!verify_index(&good, &keys, 1000, 100, 0).exhaustive);
    }
}
