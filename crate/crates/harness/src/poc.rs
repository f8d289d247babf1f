//! Lookup-latency comparison of fixed index configurations on a
//! three-partition workload.

use std::path::Path;

use anyhow::{Context, Result};
use evidx_core::builder::{build_from_config, bulkload, BulkloadSpec};
use evidx_core::config::{ChildConfig, IndexConfig, NodeConfig, RoutingConfig};
use evidx_core::genetic::{time_queries, verify_workload};
use evidx_core::layout::DataLayout;
use evidx_core::physical::PhysicalIndex;
use evidx_core::search::{NoProbe, SearchMethod};
use evidx_core::workload::{Domain, MixComponent, Workload, WorkloadSpec};
use evidx_core::Key;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::capacity_for;

/// Rank fractions where the workload changes character.
pub const SPLITS: (f64, f64) = (0.10, 0.85);
pub const BTREE_LEAF_FILL: usize = 64;
pub const BTREE_FANOUT: usize = 16;

/// Point lookups on the outer partitions, point and range lookups on the
/// middle one: 20% / 10% / 50% points and 20% ranges.
pub fn three_partition_workload(count: usize, sel: f64) -> WorkloadSpec {
    let (a, b) = SPLITS;
    let point = |lo, hi| WorkloadSpec::Point { domain: Domain { lo, hi }, count: 0 };
    WorkloadSpec::Mix {
        components: vec![
            MixComponent { proportion: 0.2, spec: point(0.0, a) },
            MixComponent { proportion: 0.1, spec: point(a, b) },
            MixComponent { proportion: 0.5, spec: point(b, 1.0) },
            MixComponent {
                proportion: 0.2,
                spec: WorkloadSpec::Range { sel, domain: Domain { lo: a, hi: b }, count: 0 },
            },
        ],
        count,
    }
}

/// Uniform B-tree: SortedCol+BinS everywhere, 64-entry leaves, fanout 16.
pub fn uniform_btree(keys: &[Key]) -> Result<PhysicalIndex> {
    let spec = BulkloadSpec::btree(keys.len(), BTREE_LEAF_FILL, BTREE_FANOUT, DataLayout::SortedCol, SearchMethod::BinS);
    Ok(bulkload(keys, &BulkloadSpec { capacity: capacity_for(keys.len()), ..spec })?)
}

/// Hash | B-tree | Hash under a SortedCol+BinS root, split at the workload
/// partition boundaries.
pub fn hand_spec_config(keys: &[Key]) -> Result<IndexConfig> {
    let n = keys.len();
    let a = ((SPLITS.0 * n as f64).floor() as usize).clamp(1, n.saturating_sub(2).max(1));
    let b = ((SPLITS.1 * n as f64).floor() as usize).clamp(a + 1, n.saturating_sub(1).max(a + 1));
    anyhow::ensure!(b < n, "hand spec needs at least 3 keys, got {n}");
    let hash = |count| NodeConfig::Leaf { layout: DataLayout::Hash, search: SearchMethod::HashS, count };
    let root = NodeConfig::Inner {
        routing: RoutingConfig::Pivots { layout: DataLayout::SortedCol, search: SearchMethod::BinS, pivots: vec![keys[a], keys[b]] },
        children: vec![
            ChildConfig { slot: 0, node: hash(a) },
            ChildConfig { slot: 1, node: uniform_btree(&keys[a..b])?.to_config().root },
            ChildConfig { slot: 2, node: hash(n - b) },
        ],
    };
    Ok(IndexConfig::new(capacity_for(n), root))
}

pub fn hand_spec(keys: &[Key]) -> Result<PhysicalIndex> {
    Ok(build_from_config(&hand_spec_config(keys)?, keys)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocRow {
    pub contender: String,
    pub queries: usize,
    pub runs: usize,
    pub mean_ns_per_query: f64,
    pub std_ns_per_query: f64,
    pub mean_total_ns: f64,
}

/// Verifies each contender, then times `runs` shuffled executions of the
/// workload after one warm-up pass.
pub fn run_poc(workload: &Workload, contenders: &[(String, PhysicalIndex)], runs: usize, seed: u64) -> Result<Vec<PocRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = workload.queries.clone();
    let mut rows = Vec::with_capacity(contenders.len());
    for (name, index) in contenders {
        verify_workload(index, workload, &mut NoProbe).with_context(|| format!("contender {name} is incorrect"))?;
        let totals: Vec<f64> = (0..runs.max(1))
            .map(|_| {
                queries.shuffle(&mut rng);
                time_queries(index, &queries, workload.mode) as f64
            })
            .collect();
        let per_query: Vec<f64> = totals.iter().map(|t| t / queries.len().max(1) as f64).collect();
        let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
        let var = per_query.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / per_query.len() as f64;
        rows.push(PocRow {
            contender: name.clone(),
            queries: queries.len(),
            runs: totals.len(),
            mean_ns_per_query: mean,
            std_ns_per_query: var.sqrt(),
            mean_total_ns: totals.iter().sum::<f64>() / totals.len() as f64,
        });
    }
    Ok(rows)
}

pub fn write_poc_csv(path: &Path, rows: &[PocRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["contender", "queries", "runs", "mean_ns_per_query", "std_ns_per_query", "mean_total_ns"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
