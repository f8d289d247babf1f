//! Index construction: single nodes, randomized bottom-up bulkloading, the
//! initial population, and rebuilding a config on a (possibly larger)
//! dataset.
//!
//! Every builder takes sorted unique keys and assigns each key its rank as
//! payload.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{IndexConfig, NodeConfig, RoutingConfig};
use crate::layout::{compatible, valid_pairs, DataLayout, SearchError};
use crate::physical::{PhysicalError, PhysicalIndex, PhysicalNode, Routing, DEFAULT_CAPACITY};
use crate::search::SearchMethod;
use crate::{Key, Payload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error(transparent)]
    Physical(#[from] PhysicalError),
    #[error("infeasible bulkload: {0}")]
    Infeasible(String),
    #[error("keys are not strictly increasing at position {0}")]
    Unsorted(usize),
    #[error("config does not fit the dataset: {0}")]
    Config(String),
}

impl From<SearchError> for BuildError {
    fn from(e: SearchError) -> Self {
        BuildError::Physical(e.into())
    }
}

fn check_sorted(keys: &[Key]) -> Result<(), BuildError> {
    match keys.windows(2).position(|w| w[0] >= w[1]) {
        Some(i) => Err(BuildError::Unsorted(i + 1)),
        None => Ok(()),
    }
}

fn ranked(keys: &[Key], base: usize) -> Vec<(Key, Payload)> {
    keys.iter().enumerate().map(|(i, &k)| (k, (base + i) as Payload)).collect()
}

/// One node holding the whole dataset.
pub fn build_single_node(
    keys: &[Key],
    layout: DataLayout,
    search: SearchMethod,
    capacity: usize,
) -> Result<PhysicalIndex, BuildError> {
    check_sorted(keys)?;
    let node = PhysicalNode::leaf(layout, search, ranked(keys, 0))?;
    Ok(PhysicalIndex::new(Arc::new(node), capacity)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhysicalChoice {
    /// Same pair everywhere; inner nodes require a non-hash layout.
    Fixed { layout: DataLayout, search: SearchMethod },
    /// Uniform draw over valid pairs per node.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkloadSpec {
    pub leaf_count: usize,
    pub leaf_fill: usize,
    pub fanout: usize,
    pub physical: PhysicalChoice,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

impl BulkloadSpec {
    /// About 100 equally filled leaves under a fanout of 10.
    pub fn initial(n: usize, physical: PhysicalChoice) -> Self {
        let leaf_count = n.clamp(1, 100);
        BulkloadSpec {
            leaf_count,
            leaf_fill: n.div_ceil(leaf_count).max(1),
            fanout: 10,
            physical,
            capacity: DEFAULT_CAPACITY,
        }
    }

    /// Uniform B-tree with the given leaf fill and fanout.
    pub fn btree(n: usize, leaf_fill: usize, fanout: usize, layout: DataLayout, search: SearchMethod) -> Self {
        BulkloadSpec {
            leaf_count: n.div_ceil(leaf_fill.max(1)).max(1),
            leaf_fill,
            fanout,
            physical: PhysicalChoice::Fixed { layout, search },
            capacity: DEFAULT_CAPACITY,
        }
    }
}

/// Splits `m` items into `g` contiguous groups whose sizes differ by at most one.
fn balanced_bounds(m: usize, g: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..g).map(move |i| (i * m / g, (i + 1) * m / g))
}

struct Chooser {
    choice: PhysicalChoice,
    rng: ChaCha8Rng,
    leaf_pairs: Vec<(DataLayout, SearchMethod)>,
    inner_pairs: Vec<(DataLayout, SearchMethod)>,
}

impl Chooser {
    fn new(choice: PhysicalChoice) -> Result<Self, BuildError> {
        let seed = match choice {
            PhysicalChoice::Random { seed } => seed,
            PhysicalChoice::Fixed { layout, search } => {
                if !compatible(layout, search) {
                    return Err(SearchError::Incompatible { layout, search }.into());
                }
                0
            }
        };
        Ok(Chooser {
            choice,
            rng: ChaCha8Rng::seed_from_u64(seed),
            leaf_pairs: valid_pairs(false, false),
            inner_pairs: valid_pairs(true, false),
        })
    }

    fn pick(&mut self, routing: bool) -> (DataLayout, SearchMethod) {
        match self.choice {
            PhysicalChoice::Fixed { layout, search } => (layout, search),
            PhysicalChoice::Random { .. } => {
                let pairs = if routing { &self.inner_pairs } else { &self.leaf_pairs };
                *pairs.choose(&mut self.rng).expect("non-empty pair set")
            }
        }
    }
}

/// Bottom-up B-tree-shaped bulkload with pivot routing.
pub fn bulkload(keys: &[Key], spec: &BulkloadSpec) -> Result<PhysicalIndex, BuildError> {
    check_sorted(keys)?;
    let n = keys.len();
    let BulkloadSpec { leaf_count, leaf_fill, fanout, .. } = *spec;
    if leaf_count == 0 || fanout < 2 {
        return Err(BuildError::Infeasible(format!("leaf_count={leaf_count}, fanout={fanout}")));
    }
    if leaf_count.saturating_mul(leaf_fill) < n {
        return Err(BuildError::Infeasible(format!("{leaf_count} leaves of {leaf_fill} cannot hold {n} keys")));
    }
    if leaf_count > n.max(1) {
        return Err(BuildError::Infeasible(format!("{leaf_count} leaves for {n} keys leaves some empty")));
    }
    let mut chooser = Chooser::new(spec.physical)?;

    // (first key, node) per level
    let mut level: Vec<(Option<Key>, Arc<PhysicalNode>)> = Vec::with_capacity(leaf_count);
    for (a, b) in balanced_bounds(n, leaf_count) {
        let (layout, search) = chooser.pick(false);
        let node = PhysicalNode::leaf(layout, search, ranked(&keys[a..b], a))?;
        level.push((keys.get(a).copied(), Arc::new(node)));
    }
    while level.len() > 1 {
        let m = level.len();
        let groups = m.div_ceil(fanout);
        let mut next = Vec::with_capacity(groups);
        for (a, b) in balanced_bounds(m, groups) {
            let (layout, search) = chooser.pick(true);
            if layout == DataLayout::Hash {
                return Err(SearchError::HashRouting.into());
            }
            let pivots = level[a + 1..b].iter().map(|(k, _)| k.expect("non-empty leaf")).collect();
            let children = level[a..b].iter().map(|(_, c)| c.clone()).collect();
            let node = PhysicalNode::inner(Routing::pivots(layout, search, pivots)?, children)?;
            next.push((level[a].0, Arc::new(node)));
        }
        level = next;
    }
    let root = level.pop().expect("at least one leaf").1;
    Ok(PhysicalIndex::new(root, spec.capacity)?)
}

/// Derives `count` child seeds from one master seed.
pub fn derive_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// `s_init` randomly configured bulkloads of the same shape.
pub fn init_population(
    keys: &[Key],
    s_init: usize,
    shape: &BulkloadSpec,
    master_seed: u64,
) -> Result<Vec<PhysicalIndex>, BuildError> {
    derive_seeds(master_seed, s_init)
        .into_iter()
        .map(|seed| bulkload(keys, &BulkloadSpec { physical: PhysicalChoice::Random { seed }, ..*shape }))
        .collect()
}

/// Rebuilds `config` over `keys`.
///
/// Pivot children receive rank ranges scaled from their origin counts, so an
/// identity rebuild reproduces the original index and a larger dataset keeps
/// the topology with proportionally fuller nodes. Pivots are re-derived as
/// the first key of every child but the first. The capacity grows with the
/// dataset when needed.
pub fn build_from_config(config: &IndexConfig, keys: &[Key]) -> Result<PhysicalIndex, BuildError> {
    check_sorted(keys)?;
    let origin = config.root.total_count();
    let n = keys.len();
    let capacity = if origin > 0 && n > origin {
        config.capacity.max(((config.capacity as u128 * n as u128).div_ceil(origin as u128)) as usize)
    } else {
        config.capacity
    };
    let root = build_node(&config.root, keys, 0)?;
    Ok(PhysicalIndex::new(Arc::new(root), capacity)?)
}

fn build_node(cfg: &NodeConfig, keys: &[Key], base: usize) -> Result<PhysicalNode, BuildError> {
    match cfg {
        NodeConfig::Leaf { layout, search, .. } => Ok(PhysicalNode::leaf(*layout, *search, ranked(keys, base))?),
        NodeConfig::Inner { routing: RoutingConfig::Pivots { layout, search, .. }, children } => {
            let origin: Vec<usize> = children.iter().map(|c| c.node.total_count()).collect();
            let total: usize = origin.iter().sum();
            let n = keys.len();
            let mut bounds = Vec::with_capacity(children.len() + 1);
            let mut cum = 0usize;
            bounds.push(0);
            for c in &origin {
                cum += c;
                let end = if total == 0 { n } else { (cum as u128 * n as u128 / total as u128) as usize };
                bounds.push(end);
            }
            let mut built = Vec::with_capacity(children.len());
            let mut pivots = Vec::with_capacity(children.len().saturating_sub(1));
            for (i, child) in children.iter().enumerate() {
                let (a, b) = (bounds[i], bounds[i + 1]);
                if i > 0 {
                    if a == b {
                        return Err(BuildError::Config(format!("pivot child {i} would be empty")));
                    }
                    pivots.push(keys[a]);
                }
                built.push(Arc::new(build_node(&child.node, &keys[a..b], base + a)?));
            }
            Ok(PhysicalNode::inner(Routing::pivots(*layout, *search, pivots)?, built)?)
        }
        NodeConfig::Inner { routing: RoutingConfig::Function { function }, children } => {
            function.validate().map_err(PhysicalError::from)?;
            let slots: Vec<u64> = children.iter().map(|c| c.slot).collect();
            if slots.windows(2).any(|w| w[0] >= w[1]) {
                return Err(BuildError::Config("function slots are not strictly increasing".into()));
            }
            let mut parts: Vec<Vec<(Key, usize)>> = vec![Vec::new(); slots.len()];
            for (i, &k) in keys.iter().enumerate() {
                let v = function.apply(k);
                let s = slots
                    .binary_search(&v)
                    .map_err(|_| BuildError::Config(format!("key {k} maps to partition {v}, which has no child")))?;
                parts[s].push((k, base + i));
            }
            let mut built = Vec::with_capacity(children.len());
            for (child, part) in children.iter().zip(parts) {
                built.push(Arc::new(build_scattered(&child.node, &part)?));
            }
            Ok(PhysicalNode::inner(Routing::Function { function: function.clone(), slots }, built)?)
        }
    }
}

/// Builds a subtree over keys whose ranks need not be contiguous.
fn build_scattered(cfg: &NodeConfig, part: &[(Key, usize)]) -> Result<PhysicalNode, BuildError> {
    let contiguous = part.windows(2).all(|w| w[1].1 == w[0].1 + 1);
    if contiguous {
        let keys: Vec<Key> = part.iter().map(|e| e.0).collect();
        return build_node(cfg, &keys, part.first().map_or(0, |e| e.1));
    }
    match cfg {
        NodeConfig::Leaf { layout, search, .. } => Ok(PhysicalNode::leaf(
            *layout,
            *search,
            part.iter().map(|&(k, r)| (k, r as Payload)).collect(),
        )?),
        _ => Err(BuildError::Config("nested routing below an unordered partition is not supported".into())),
    }
}
