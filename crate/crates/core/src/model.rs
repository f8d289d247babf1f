//! Logical index model: nodes made of a partitioning function, routing
//! information and data, the index graph over them, recursive range queries
//! and the exhaustive correctness check.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Key, Payload};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tuple {
    pub key: Key,
    pub payload: Payload,
}

impl Tuple {
    pub fn new(key: Key, payload: Payload) -> Self {
        Tuple { key, payload }
    }
}

/// Turns sorted unique keys into tuples whose payload is the key's rank.
pub fn ranked_tuples(keys: &[Key]) -> Vec<Tuple> {
    keys.iter().enumerate().map(|(i, &k)| Tuple::new(k, i as Payload)).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {node} routes to missing node {target}")]
    Incomplete { node: NodeId, target: NodeId },
    #[error("index graph contains a cycle through node {0}")]
    Cycle(NodeId),
    #[error("node {0} is not reachable from the start nodes")]
    Unreachable(NodeId),
    #[error("node {0} has routing information but no partitioning function")]
    RoutingWithoutPartition(NodeId),
    #[error("internal node {0} holds data")]
    InternalData(NodeId),
    #[error("invalid partitioning function: {0}")]
    InvalidPartition(String),
    #[error("invalid range: lower bound {l} exceeds upper bound {h}")]
    InvalidRange { l: Key, h: Key },
}

/// Maps keys into a partition domain of 64-bit values.
///
/// For `RangePivots` the domain value is the index of the half-open key range
/// a key falls into: `k` pivots induce ranges `(-inf, p1), [p1, p2), ...,
/// [pk, inf)` numbered `0..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitioningFunction {
    RangePivots { pivots: Vec<Key> },
    /// `floor(slope * key + intercept)` clamped into `0..bins`.
    LinearModel { slope: f64, intercept: f64, bins: u64 },
    /// The lowest `width` bits of the key.
    BitSuffix { width: u32 },
    /// `width` bits starting `start` bits below the most significant bit.
    BitPrefix { start: u32, width: u32 },
}

/// Domain values whose routing entries a range query must follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainSpan {
    All,
    Values(RangeInclusive<u64>),
}

impl DomainSpan {
    pub fn contains(&self, value: u64) -> bool {
        match self {
            DomainSpan::All => true,
            DomainSpan::Values(r) => r.contains(&value),
        }
    }
}

#[inline]
fn low_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

impl PartitioningFunction {
    pub fn pivots(pivots: Vec<Key>) -> Self {
        PartitioningFunction::RangePivots { pivots }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            PartitioningFunction::RangePivots { pivots } => {
                if pivots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ModelError::InvalidPartition("pivots are not strictly increasing".into()));
                }
            }
            PartitioningFunction::LinearModel { slope, intercept, bins } => {
                if *bins == 0 {
                    return Err(ModelError::InvalidPartition("linear model needs at least one bin".into()));
                }
                if !slope.is_finite() || !intercept.is_finite() {
                    return Err(ModelError::InvalidPartition("linear model parameters must be finite".into()));
                }
            }
            PartitioningFunction::BitSuffix { width } => {
                if !(1..=64).contains(width) {
                    return Err(ModelError::InvalidPartition(format!("suffix width {width} outside 1..=64")));
                }
            }
            PartitioningFunction::BitPrefix { start, width } => {
                if !(1..=64).contains(width) || start + width > 64 {
                    return Err(ModelError::InvalidPartition(format!(
                        "prefix bits {start}..{} outside the key",
                        start + width
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, key: Key) -> u64 {
        match self {
            PartitioningFunction::RangePivots { pivots } => pivots.partition_point(|&p| p <= key) as u64,
            PartitioningFunction::LinearModel { slope, intercept, bins } => {
                let v = (slope * key as f64 + intercept).floor();
                if v.is_nan() || v <= 0.0 {
                    0
                } else {
                    (v as u64).min(bins - 1)
                }
            }
            PartitioningFunction::BitSuffix { width } => key & low_mask(*width),
            PartitioningFunction::BitPrefix { start, width } => {
                (key.checked_shl(*start).unwrap_or(0) >> (64 - width)) & low_mask(*width)
            }
        }
    }

    /// Key interval `[lo, hi]` covered by partition `value` of a pivot
    /// function; `None` for functions whose partitions are not ranges.
    pub fn key_range(&self, value: u64) -> Option<(Key, Key)> {
        let PartitioningFunction::RangePivots { pivots } = self else {
            return None;
        };
        let i = value as usize;
        if i > pivots.len() {
            return None;
        }
        let lo = if i == 0 { Key::MIN } else { pivots[i - 1] };
        let hi = if i == pivots.len() { Key::MAX } else { pivots[i] - 1 };
        Some((lo, hi))
    }

    /// Domain values that keys in `[l, h]` can map to.
    pub fn span(&self, l: Key, h: Key) -> DomainSpan {
        match self {
            PartitioningFunction::RangePivots { .. } => DomainSpan::Values(self.apply(l)..=self.apply(h)),
            PartitioningFunction::LinearModel { slope, .. } => {
                let (a, b) = (self.apply(l), self.apply(h));
                if *slope >= 0.0 {
                    DomainSpan::Values(a..=b)
                } else {
                    DomainSpan::Values(b..=a)
                }
            }
            PartitioningFunction::BitSuffix { width } => {
                if *width < 64 && (l >> width) != (h >> width) {
                    DomainSpan::All
                } else {
                    DomainSpan::Values(self.apply(l)..=self.apply(h))
                }
            }
            PartitioningFunction::BitPrefix { start, .. } => {
                let fixed = |k: Key| k.checked_shr(64 - start).unwrap_or(0);
                if *start > 0 && fixed(l) != fixed(h) {
                    DomainSpan::All
                } else {
                    DomainSpan::Values(self.apply(l)..=self.apply(h))
                }
            }
        }
    }

    /// True when the function preserves key order over the whole domain.
    pub fn is_monotone(&self) -> bool {
        match self {
            PartitioningFunction::RangePivots { .. } => true,
            PartitioningFunction::LinearModel { slope, .. } => *slope >= 0.0,
            PartitioningFunction::BitSuffix { width } => *width == 64,
            PartitioningFunction::BitPrefix { start, .. } => *start == 0,
        }
    }
}

/// Routing information: partition-domain values mapped to node sets. Values
/// without an entry route nowhere.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingInformation {
    pub entries: BTreeMap<u64, BTreeSet<NodeId>>,
}

impl RoutingInformation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(&mut self, value: u64, target: NodeId) {
        self.entries.entry(value).or_default().insert(target);
    }

    pub fn targets(&self, value: u64) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.get(&value).into_iter().flatten().copied()
    }

    /// nodes(RI)
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.entries.values().flatten().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(BTreeSet::is_empty)
    }

    fn targets_in<'a>(&'a self, span: &'a DomainSpan) -> impl Iterator<Item = NodeId> + 'a {
        let entries: Box<dyn Iterator<Item = (&u64, &BTreeSet<NodeId>)>> = match span {
            DomainSpan::All => Box::new(self.entries.iter()),
            DomainSpan::Values(r) => Box::new(self.entries.range(r.clone())),
        };
        entries.flat_map(|(_, set)| set.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalNode {
    pub id: NodeId,
    pub partition: Option<PartitioningFunction>,
    pub routing: Option<RoutingInformation>,
    /// Sorted by key; a set, so no duplicates.
    pub data: Vec<Tuple>,
}

impl LogicalNode {
    pub fn leaf(id: NodeId, mut data: Vec<Tuple>) -> Self {
        data.sort_unstable();
        data.dedup();
        LogicalNode { id, partition: None, routing: None, data }
    }

    pub fn inner(id: NodeId, partition: PartitioningFunction, routing: RoutingInformation) -> Self {
        LogicalNode { id, partition: Some(partition), routing: Some(routing), data: Vec::new() }
    }

    pub fn children(&self) -> BTreeSet<NodeId> {
        self.routing.as_ref().map(RoutingInformation::nodes).unwrap_or_default()
    }

    pub fn is_inner(&self) -> bool {
        self.routing.as_ref().is_some_and(|ri| !ri.is_empty())
    }

    /// Tuples with `l <= key <= h`.
    pub fn select(&self, l: Key, h: Key) -> &[Tuple] {
        let a = self.data.partition_point(|t| t.key < l);
        let b = self.data.partition_point(|t| t.key <= h);
        &self.data[a..b.max(a)]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogicalIndex {
    pub nodes: BTreeMap<NodeId, LogicalNode>,
    pub start_nodes: Vec<NodeId>,
}

/// Outcome of the exhaustive correctness check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correctness {
    /// First `(l, h)` pair whose result differs from the filtered dataset.
    pub counterexample: Option<(Key, Key)>,
    pub pairs_checked: u64,
}

impl Correctness {
    pub fn is_correct(&self) -> bool {
        self.counterexample.is_none()
    }
}

impl LogicalIndex {
    pub fn new(nodes: impl IntoIterator<Item = LogicalNode>, start_nodes: Vec<NodeId>) -> Self {
        LogicalIndex { nodes: nodes.into_iter().map(|n| (n.id, n)).collect(), start_nodes }
    }

    pub fn node(&self, id: NodeId) -> Result<&LogicalNode, ModelError> {
        self.nodes.get(&id).ok_or(ModelError::UnknownNode(id))
    }

    /// Every routing target is a member of the node set.
    pub fn check_complete(&self) -> bool {
        self.first_dangling().is_none()
    }

    fn first_dangling(&self) -> Option<(NodeId, NodeId)> {
        self.nodes.values().find_map(|n| {
            n.children().into_iter().find(|c| !self.nodes.contains_key(c)).map(|c| (n.id, c))
        })
    }

    /// Checks completeness, acyclicity, reachability and per-node shape.
    pub fn validate(&self) -> Result<(), ModelError> {
        for n in self.nodes.values() {
            if n.routing.is_some() && n.partition.is_none() {
                return Err(ModelError::RoutingWithoutPartition(n.id));
            }
            if let Some(p) = &n.partition {
                p.validate()?;
            }
            if n.is_inner() && !n.data.is_empty() {
                return Err(ModelError::InternalData(n.id));
            }
        }
        if let Some((node, target)) = self.first_dangling() {
            return Err(ModelError::Incomplete { node, target });
        }
        for &s in &self.start_nodes {
            self.node(s)?;
        }

        // Iterative DFS with white/grey/black colouring.
        let mut state: HashMap<NodeId, u8> = HashMap::new();
        for &s in &self.start_nodes {
            if state.contains_key(&s) {
                continue;
            }
            let mut stack: Vec<(NodeId, Vec<NodeId>)> = vec![(s, self.nodes[&s].children().into_iter().collect())];
            state.insert(s, 1);
            while let Some((id, pending)) = stack.last_mut() {
                match pending.pop() {
                    Some(c) => match state.get(&c) {
                        Some(1) => return Err(ModelError::Cycle(c)),
                        Some(_) => {}
                        None => {
                            state.insert(c, 1);
                            let next = self.nodes[&c].children().into_iter().collect();
                            stack.push((c, next));
                        }
                    },
                    None => {
                        state.insert(*id, 2);
                        stack.pop();
                    }
                }
            }
        }
        if let Some(&id) = self.nodes.keys().find(|id| !state.contains_key(id)) {
            return Err(ModelError::Unreachable(id));
        }
        Ok(())
    }

    /// Union of all node data sets.
    pub fn dataset(&self) -> BTreeSet<Tuple> {
        self.nodes.values().flat_map(|n| n.data.iter().copied()).collect()
    }

    /// Recursive range query from `start`; every node is visited at most once.
    pub fn range_query(&self, start: &[NodeId], l: Key, h: Key) -> Result<BTreeSet<Tuple>, ModelError> {
        let mut out = BTreeSet::new();
        self.visit_range(start, l, h, |n| out.extend(n.select(l, h).iter().copied()))?;
        Ok(out)
    }

    /// Walks the nodes a range query reaches, calling `f` once per node.
    pub fn visit_range<'a>(
        &'a self,
        start: &[NodeId],
        l: Key,
        h: Key,
        mut f: impl FnMut(&'a LogicalNode),
    ) -> Result<(), ModelError> {
        if l > h {
            return Err(ModelError::InvalidRange { l, h });
        }
        let mut visited = HashSet::new();
        let mut stack: Vec<NodeId> = Vec::new();
        for &s in start {
            if visited.insert(s) {
                stack.push(s);
            }
        }
        while let Some(id) = stack.pop() {
            let node = self.node(id)?;
            f(node);
            if let (Some(p), Some(ri)) = (&node.partition, &node.routing) {
                let span = p.span(l, h);
                for c in ri.targets_in(&span) {
                    if visited.insert(c) {
                        stack.push(c);
                    }
                }
            }
        }
        Ok(())
    }

    /// Compares range queries over every `(l, h)` pair of the key grid (all
    /// dataset keys plus one sentinel below and above) to a filter over
    /// `dataset`.
    pub fn check_correct(&self, dataset: &[Tuple]) -> Result<Correctness, ModelError> {
        let mut sorted = dataset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let keys: Vec<Key> = sorted.iter().map(|t| t.key).collect();
        let grid = key_grid(&keys);

        // When node data sets are disjoint subsets of the dataset, equality of
        // result sets reduces to equality of their sizes.
        let stored: Vec<Tuple> = self.nodes.values().flat_map(|n| n.data.iter().copied()).collect();
        let member: HashSet<Tuple> = sorted.iter().copied().collect();
        let disjoint = {
            let mut seen = HashSet::with_capacity(stored.len());
            stored.iter().all(|t| member.contains(t) && seen.insert(*t))
        };

        let mut pairs = 0u64;
        for (i, &l) in grid.iter().enumerate() {
            for &h in &grid[i..] {
                pairs += 1;
                let lo = keys.partition_point(|&k| k < l);
                let hi = keys.partition_point(|&k| k <= h);
                let ok = if disjoint {
                    let mut count = 0usize;
                    self.visit_range(&self.start_nodes, l, h, |n| count += n.select(l, h).len())?;
                    count == hi - lo
                } else {
                    let got = self.range_query(&self.start_nodes, l, h)?;
                    got.len() == hi - lo && got.iter().zip(&sorted[lo..hi]).all(|(a, b)| a == b)
                };
                if !ok {
                    return Ok(Correctness { counterexample: Some((l, h)), pairs_checked: pairs });
                }
            }
        }
        Ok(Correctness { counterexample: None, pairs_checked: pairs })
    }
}

/// Distinct sorted keys plus a sentinel just below the minimum and just above
/// the maximum, where those exist in the key domain.
pub fn key_grid(sorted_keys: &[Key]) -> Vec<Key> {
    let mut grid = Vec::with_capacity(sorted_keys.len() + 2);
    match (sorted_keys.first(), sorted_keys.last()) {
        (Some(&min), Some(&max)) => {
            if min > Key::MIN {
                grid.push(min - 1);
            }
            grid.extend_from_slice(sorted_keys);
            grid.dedup();
            if max < Key::MAX {
                grid.push(max + 1);
            }
        }
        _ => grid.push(0),
    }
    grid
}
