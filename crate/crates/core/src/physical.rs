//! Physical nodes and indexes plus query execution over them.
//!
//! A physical index is a tree of reference-counted nodes. Mutations copy the
//! path from the root to the changed node and share everything else, so
//! every index value is immutable once built. Nodes are addressed by their
//! position in a preorder walk.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::layout::{DataLayout, DataStore, SearchError};
use crate::model::{key_grid, LogicalIndex, LogicalNode, ModelError, NodeId, PartitioningFunction, RoutingInformation, Tuple};
use crate::search::{NoProbe, Probe, SearchMethod};
use crate::{Key, Payload};

/// Default limit on entries or children per node.
pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicalError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("node {node} holds {entries} entries, capacity is {capacity}")]
    Capacity { node: usize, entries: usize, capacity: usize },
    #[error("malformed node: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafNode {
    pub search: SearchMethod,
    pub data: DataStore<Payload>,
}

impl LeafNode {
    pub fn layout(&self) -> DataLayout {
        self.data.layout()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Routing {
    /// Child `i` covers the `i`-th half-open range induced by `pivots`.
    Pivots { search: SearchMethod, pivots: Vec<Key>, store: DataStore<u32> },
    /// Child `i` receives keys the function maps to `slots[i]`.
    Function { function: PartitioningFunction, slots: Vec<u64> },
}

impl Routing {
    pub fn pivots(layout: DataLayout, search: SearchMethod, pivots: Vec<Key>) -> Result<Self, PhysicalError> {
        if layout == DataLayout::Hash {
            return Err(SearchError::HashRouting.into());
        }
        let entries = pivots.iter().enumerate().map(|(i, &p)| (p, i as u32 + 1)).collect();
        let store = DataStore::build(layout, search, entries)?;
        Ok(Routing::Pivots { search, pivots, store })
    }

    pub fn layout(&self) -> Option<DataLayout> {
        match self {
            Routing::Pivots { store, .. } => Some(store.layout()),
            Routing::Function { .. } => None,
        }
    }

    pub fn search(&self) -> Option<SearchMethod> {
        match self {
            Routing::Pivots { search, .. } => Some(*search),
            Routing::Function { .. } => None,
        }
    }

    pub fn partition(&self) -> PartitioningFunction {
        match self {
            Routing::Pivots { pivots, .. } => PartitioningFunction::pivots(pivots.clone()),
            Routing::Function { function, .. } => function.clone(),
        }
    }

    fn slot_count(&self) -> usize {
        match self {
            Routing::Pivots { pivots, .. } => pivots.len() + 1,
            Routing::Function { slots, .. } => slots.len(),
        }
    }

    /// Child slot responsible for `key`, if any.
    #[inline]
    fn route<P: Probe>(&self, key: Key, probe: &mut P) -> Option<usize> {
        match self {
            Routing::Pivots { search, store, .. } => Some(store.floor(*search, key, probe).map_or(0, |v| v as usize)),
            Routing::Function { function, slots } => {
                let v = function.apply(key);
                probe.compare(slots.len().max(1).ilog2() as u64 + 1);
                slots.binary_search(&v).ok()
            }
        }
    }

    /// Child slots a range `[l, h]` may reach, as an inclusive slot interval
    /// or every slot.
    #[inline]
    fn span<P: Probe>(&self, l: Key, h: Key, probe: &mut P) -> (usize, usize) {
        match self {
            Routing::Pivots { .. } => {
                let a = self.route(l, probe).unwrap_or(0);
                let b = self.route(h, probe).unwrap_or(0);
                (a, b)
            }
            Routing::Function { function, slots } => match function.span(l, h) {
                crate::model::DomainSpan::All => (0, slots.len().wrapping_sub(1)),
                crate::model::DomainSpan::Values(r) => {
                    let a = slots.partition_point(|&s| s < *r.start());
                    let b = slots.partition_point(|&s| s <= *r.end());
                    if a >= b {
                        (1, 0)
                    } else {
                        (a, b - 1)
                    }
                }
            },
        }
    }

    fn is_ordered(&self) -> bool {
        match self {
            Routing::Pivots { .. } => true,
            Routing::Function { function, .. } => function.is_monotone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerNode {
    pub routing: Routing,
    pub children: Vec<Arc<PhysicalNode>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhysicalNode {
    Leaf(LeafNode),
    Inner(InnerNode),
}

impl PhysicalNode {
    /// Leaf over `(key, payload)` entries sorted by key.
    pub fn leaf(layout: DataLayout, search: SearchMethod, entries: Vec<(Key, Payload)>) -> Result<Self, PhysicalError> {
        Ok(PhysicalNode::Leaf(LeafNode { search, data: DataStore::build(layout, search, entries)? }))
    }

    pub fn inner(routing: Routing, children: Vec<Arc<PhysicalNode>>) -> Result<Self, PhysicalError> {
        let slots = routing.slot_count();
        if slots != children.len() {
            return Err(PhysicalError::Shape(format!("{slots} routing slots for {} children", children.len())));
        }
        if children.is_empty() {
            return Err(PhysicalError::Shape("inner node without children".into()));
        }
        match &routing {
            Routing::Pivots { pivots, .. } => {
                if pivots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(PhysicalError::Shape("pivots are not strictly increasing".into()));
                }
            }
            Routing::Function { function, slots } => {
                function.validate()?;
                if slots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(PhysicalError::Shape("function slots are not strictly increasing".into()));
                }
            }
        }
        Ok(PhysicalNode::Inner(InnerNode { routing, children }))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, PhysicalNode::Leaf(_))
    }

    /// Stored entries (leaf) or children (inner).
    pub fn entry_count(&self) -> usize {
        match self {
            PhysicalNode::Leaf(l) => l.data.len(),
            PhysicalNode::Inner(i) => i.children.len(),
        }
    }

    pub fn children(&self) -> &[Arc<PhysicalNode>] {
        match self {
            PhysicalNode::Leaf(_) => &[],
            PhysicalNode::Inner(i) => &i.children,
        }
    }

    /// Layout and search of the part that holds entries: data for leaves,
    /// routing for pivot nodes, nothing for function nodes.
    pub fn active_pair(&self) -> Option<(DataLayout, SearchMethod)> {
        match self {
            PhysicalNode::Leaf(l) => Some((l.layout(), l.search)),
            PhysicalNode::Inner(i) => Some((i.routing.layout()?, i.routing.search()?)),
        }
    }

    pub fn subtree_len(&self) -> usize {
        match self {
            PhysicalNode::Leaf(l) => l.data.len(),
            PhysicalNode::Inner(i) => i.children.iter().map(|c| c.subtree_len()).sum(),
        }
    }

    pub fn subtree_nodes(&self) -> usize {
        1 + self.children().iter().map(|c| c.subtree_nodes()).sum::<usize>()
    }

    /// All tuples below this node in key order.
    pub fn collect_entries(&self, out: &mut Vec<(Key, Payload)>) {
        match self {
            PhysicalNode::Leaf(l) => out.extend(l.data.entries()),
            PhysicalNode::Inner(i) => {
                let start = out.len();
                for c in &i.children {
                    c.collect_entries(out);
                }
                if !i.routing.is_ordered() {
                    out[start..].sort_unstable_by_key(|e| e.0);
                }
            }
        }
    }

    pub fn min_key(&self) -> Option<Key> {
        match self {
            PhysicalNode::Leaf(l) => l.data.first_key(),
            PhysicalNode::Inner(i) if i.routing.is_ordered() => i.children.iter().find_map(|c| c.min_key()),
            PhysicalNode::Inner(i) => i.children.iter().filter_map(|c| c.min_key()).min(),
        }
    }

    #[inline]
    fn point<P: Probe>(&self, key: Key, probe: &mut P) -> Option<Payload> {
        let mut node = self;
        loop {
            probe.visit_node();
            match node {
                PhysicalNode::Leaf(l) => return l.data.get(l.search, key, probe),
                PhysicalNode::Inner(i) => node = &i.children[i.routing.route(key, probe)?],
            }
        }
    }

    fn range<P: Probe>(&self, l: Key, h: Key, probe: &mut P, f: &mut impl FnMut(Key, Payload)) {
        probe.visit_node();
        match self {
            PhysicalNode::Leaf(leaf) => leaf.data.for_each_in(leaf.search, l, h, probe, &mut *f),
            PhysicalNode::Inner(i) => {
                let (a, b) = i.routing.span(l, h, probe);
                if a <= b {
                    for c in &i.children[a..=b] {
                        c.range(l, h, probe, f);
                    }
                }
            }
        }
    }

    fn lower_bound<P: Probe>(&self, key: Key, probe: &mut P) -> Option<(Key, Payload)> {
        probe.visit_node();
        match self {
            PhysicalNode::Leaf(l) => l.data.lower_bound_entry(l.search, key, probe),
            PhysicalNode::Inner(i) if i.routing.is_ordered() => {
                let start = match &i.routing {
                    Routing::Pivots { .. } => i.routing.route(key, probe).unwrap_or(0),
                    Routing::Function { function, slots } => slots.partition_point(|&s| s < function.apply(key)),
                };
                i.children[start.min(i.children.len())..].iter().find_map(|c| c.lower_bound(key, probe))
            }
            PhysicalNode::Inner(i) => {
                i.children.iter().filter_map(|c| c.lower_bound(key, probe)).min_by_key(|e| e.0)
            }
        }
    }

    fn preorder<'a>(self: &'a Arc<Self>, depth: usize, parent: Option<usize>, slot: usize, out: &mut Vec<NodeRef<'a>>) {
        let id = out.len();
        out.push(NodeRef { id, depth, parent, slot, node: self });
        for (s, c) in self.children().iter().enumerate() {
            c.preorder(depth + 1, Some(id), s, out);
        }
    }
}

/// One node of a preorder walk.
#[derive(Debug, Clone, Copy)]
pub struct NodeRef<'a> {
    pub id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    /// Position among the parent's children.
    pub slot: usize,
    pub node: &'a Arc<PhysicalNode>,
}

/// Count and checksums of a range result, computed without materializing it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RangeSummary {
    pub count: u64,
    pub payload_sum: u64,
    pub key_sum: u64,
}

impl RangeSummary {
    #[inline]
    fn add(&mut self, key: Key, payload: Payload) {
        self.count += 1;
        self.payload_sum = self.payload_sum.wrapping_add(payload);
        self.key_sum = self.key_sum.wrapping_add(key);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalIndex {
    root: Arc<PhysicalNode>,
    capacity: usize,
}

impl PhysicalIndex {
    pub fn new(root: Arc<PhysicalNode>, capacity: usize) -> Result<Self, PhysicalError> {
        let idx = PhysicalIndex { root, capacity };
        for r in idx.nodes() {
            let entries = r.node.entry_count();
            if entries > capacity {
                return Err(PhysicalError::Capacity { node: r.id, entries, capacity });
            }
        }
        Ok(idx)
    }

    pub fn root(&self) -> &Arc<PhysicalNode> {
        &self.root
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Nodes in preorder; a node's id is its position in this list.
    pub fn nodes(&self) -> Vec<NodeRef<'_>> {
        let mut out = Vec::new();
        self.root.preorder(0, None, 0, &mut out);
        out
    }

    pub fn node_count(&self) -> usize {
        self.root.subtree_nodes()
    }

    pub fn len(&self) -> usize {
        self.root.subtree_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.nodes().iter().map(|r| r.depth + 1).max().unwrap_or(1)
    }

    /// Child positions leading from the root to preorder node `id`.
    pub fn path_to(&self, id: usize) -> Option<Vec<usize>> {
        let nodes = self.nodes();
        let mut cur = nodes.get(id)?;
        let mut path = Vec::with_capacity(cur.depth);
        while let Some(p) = cur.parent {
            path.push(cur.slot);
            cur = &nodes[p];
        }
        path.reverse();
        Some(path)
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&Arc<PhysicalNode>> {
        path.iter().try_fold(&self.root, |n, &s| n.children().get(s))
    }

    /// New index with the node at `path` replaced by `node`; untouched
    /// subtrees are shared with `self`.
    pub fn replace(&self, path: &[usize], node: PhysicalNode) -> Result<Self, PhysicalError> {
        fn rebuild(cur: &Arc<PhysicalNode>, path: &[usize], node: PhysicalNode) -> Result<Arc<PhysicalNode>, PhysicalError> {
            let Some((&s, rest)) = path.split_first() else {
                return Ok(Arc::new(node));
            };
            let PhysicalNode::Inner(inner) = cur.as_ref() else {
                return Err(PhysicalError::Shape("path descends below a leaf".into()));
            };
            let child = inner.children.get(s).ok_or_else(|| PhysicalError::Shape(format!("no child at slot {s}")))?;
            let mut children = inner.children.clone();
            children[s] = rebuild(child, rest, node)?;
            Ok(Arc::new(PhysicalNode::Inner(InnerNode { routing: inner.routing.clone(), children })))
        }
        PhysicalIndex::new(rebuild(&self.root, path, node)?, self.capacity)
    }

    #[inline]
    pub fn execute_point(&self, key: Key) -> Option<Payload> {
        self.root.point(key, &mut NoProbe)
    }

    #[inline]
    pub fn execute_point_probed<P: Probe>(&self, key: Key, probe: &mut P) -> Option<Payload> {
        self.root.point(key, probe)
    }

    /// All `(key, payload)` with `l <= key <= h`, in key order.
    pub fn execute_range(&self, l: Key, h: Key) -> Vec<(Key, Payload)> {
        let mut out = Vec::new();
        if l <= h {
            self.root.range(l, h, &mut NoProbe, &mut |k, v| out.push((k, v)));
            if out.windows(2).any(|w| w[0].0 > w[1].0) {
                out.sort_unstable_by_key(|e| e.0);
            }
        }
        out
    }

    #[inline]
    pub fn range_summary<P: Probe>(&self, l: Key, h: Key, probe: &mut P) -> RangeSummary {
        let mut s = RangeSummary::default();
        if l <= h {
            self.root.range(l, h, probe, &mut |k, v| s.add(k, v));
        }
        s
    }

    /// First stored entry with key `>= key`.
    #[inline]
    pub fn execute_lower_bound<P: Probe>(&self, key: Key, probe: &mut P) -> Option<(Key, Payload)> {
        self.root.lower_bound(key, probe)
    }

    /// All stored entries in key order.
    pub fn entries(&self) -> Vec<(Key, Payload)> {
        let mut out = Vec::with_capacity(self.len());
        self.root.collect_entries(&mut out);
        out
    }

    /// Logical index underneath, with preorder positions as node ids and the
    /// root as the only start node.
    pub fn to_logical(&self) -> LogicalIndex {
        let nodes = self.nodes();
        let mut child_ids: Vec<Vec<NodeId>> = vec![Vec::new(); nodes.len()];
        for r in &nodes {
            if let Some(p) = r.parent {
                child_ids[p].push(r.id as NodeId);
            }
        }
        let logical = nodes.iter().map(|r| match r.node.as_ref() {
            PhysicalNode::Leaf(l) => LogicalNode::leaf(
                r.id as NodeId,
                l.data.entries().into_iter().map(|(k, v)| Tuple::new(k, v)).collect(),
            ),
            PhysicalNode::Inner(i) => {
                let mut ri = RoutingInformation::new();
                for (s, &c) in child_ids[r.id].iter().enumerate() {
                    let value = match &i.routing {
                        Routing::Pivots { .. } => s as u64,
                        Routing::Function { slots, .. } => slots[s],
                    };
                    ri.route(value, c);
                }
                LogicalNode::inner(r.id as NodeId, i.routing.partition(), ri)
            }
        });
        LogicalIndex::new(logical, vec![0])
    }
}

/// Cumulative sums over sorted dataset keys for O(1) expected range answers.
#[derive(Debug, Clone)]
pub struct RangeOracle {
    keys: Vec<Key>,
    key_prefix: Vec<u64>,
}

impl RangeOracle {
    pub fn new(sorted_keys: &[Key]) -> Self {
        let mut key_prefix = Vec::with_capacity(sorted_keys.len() + 1);
        key_prefix.push(0u64);
        for &k in sorted_keys {
            key_prefix.push(key_prefix.last().unwrap().wrapping_add(k));
        }
        RangeOracle { keys: sorted_keys.to_vec(), key_prefix }
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    /// Rank interval `[lo, hi)` of keys inside `[l, h]`.
    pub fn ranks(&self, l: Key, h: Key) -> (usize, usize) {
        let lo = self.keys.partition_point(|&k| k < l);
        let hi = self.keys.partition_point(|&k| k <= h).max(lo);
        (lo, hi)
    }

    pub fn summary(&self, l: Key, h: Key) -> RangeSummary {
        if l > h {
            return RangeSummary::default();
        }
        let (lo, hi) = self.ranks(l, h);
        let (a, b) = (lo as u64, hi as u64);
        if a == b {
            return RangeSummary::default();
        }
        // Sum of ranks a..b; one factor is always even.
        let payload_sum = if (b - a) % 2 == 0 {
            ((b - a) / 2).wrapping_mul(a + b - 1)
        } else {
            (b - a).wrapping_mul((a + b - 1) / 2)
        };
        RangeSummary {
            count: b - a,
            payload_sum,
            key_sum: self.key_prefix[hi].wrapping_sub(self.key_prefix[lo]),
        }
    }

    pub fn point(&self, key: Key) -> Option<Payload> {
        self.keys.binary_search(&key).ok().map(|i| i as Payload)
    }

    pub fn lower_bound(&self, key: Key) -> Option<(Key, Payload)> {
        let i = self.keys.partition_point(|&k| k < key);
        self.keys.get(i).map(|&k| (k, i as Payload))
    }

    fn check(&self, index: &PhysicalIndex, l: Key, h: Key) -> bool {
        index.range_summary(l, h, &mut NoProbe) == self.summary(l, h)
    }

    /// Checks every `(l, h)` pair of the key grid plus point and lower-bound
    /// lookups on every grid key. Returns the first failing pair.
    pub fn grid_counterexample(&self, index: &PhysicalIndex) -> Option<(Key, Key)> {
        let grid = key_grid(&self.keys);
        for &k in &grid {
            if index.execute_point(k) != self.point(k) || index.execute_lower_bound(k, &mut NoProbe) != self.lower_bound(k) {
                return Some((k, k));
            }
        }
        for (i, &l) in grid.iter().enumerate() {
            for &h in &grid[i..] {
                if !self.check(index, l, h) {
                    return Some((l, h));
                }
            }
        }
        None
    }

    /// Like [`Self::grid_counterexample`] over `pairs` random grid pairs and
    /// as many random point probes.
    pub fn sampled_counterexample<R: Rng>(&self, index: &PhysicalIndex, pairs: usize, rng: &mut R) -> Option<(Key, Key)> {
        let grid = key_grid(&self.keys);
        for _ in 0..pairs {
            let a = grid[rng.random_range(0..grid.len())];
            let b = grid[rng.random_range(0..grid.len())];
            let (l, h) = (a.min(b), a.max(b));
            if !self.check(index, l, h)
                || index.execute_point(a) != self.point(a)
                || index.execute_lower_bound(a, &mut NoProbe) != self.lower_bound(a)
            {
                return Some((l, h));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ranked_tuples;
    use crate::search::CostCounter;

    const RUNNING: [Key; 6] = [1, 2, 6, 7, 11, 12];

    fn ranked(keys: &[Key]) -> Vec<(Key, Payload)> {
        keys.iter().enumerate().map(|(i, &k)| (k, i as Payload)).collect()
    }

    fn leaf(layout: DataLayout, search: SearchMethod, e: &[(Key, Payload)]) -> Arc<PhysicalNode> {
        Arc::new(PhysicalNode::leaf(layout, search, e.to_vec()).unwrap())
    }

    /// SortedCol/BinS root with pivots 6 and 11 over three different leaves.
    fn mixed_tree() -> PhysicalIndex {
        let e = ranked(&RUNNING);
        let root = PhysicalNode::inner(
            Routing::pivots(DataLayout::SortedCol, SearchMethod::BinS, vec![6, 11]).unwrap(),
            vec![
                leaf(DataLayout::Hash, SearchMethod::HashS, &e[0..2]),
                leaf(DataLayout::Tree, SearchMethod::BinS, &e[2..4]),
                leaf(DataLayout::SortedCol, SearchMethod::LinRegS, &e[4..6]),
            ],
        )
        .unwrap();
        PhysicalIndex::new(Arc::new(root), DEFAULT_CAPACITY).unwrap()
    }

    #[test]
    fn point_and_range_on_running_example() {
        let idx = mixed_tree();
        assert_eq!(idx.execute_point(6), Some(2));
        assert_eq!(idx.execute_point(5), None);
        assert_eq!(idx.execute_range(6, 12), vec![(6, 2), (7, 3), (11, 4), (12, 5)]);
        assert!(idx.execute_range(13, 99).is_empty());
        assert!(idx.execute_range(9, 3).is_empty());
        assert_eq!(idx.execute_lower_bound(3, &mut NoProbe), Some((6, 2)));
        assert_eq!(idx.execute_lower_bound(13, &mut NoProbe), None);
    }

    #[test]
    fn grid_oracle_agrees_with_logical_check() {
        let idx = mixed_tree();
        let oracle = RangeOracle::new(&RUNNING);
        assert_eq!(oracle.grid_counterexample(&idx), None);
        let logical = idx.to_logical();
        logical.validate().unwrap();
        assert!(logical.check_correct(&ranked_tuples(&RUNNING)).unwrap().is_correct());
    }

    #[test]
    fn misplaced_tuple_detected() {
        let e = ranked(&RUNNING);
        let mut left = e[0..2].to_vec();
        left.push(e[2]);
        let root = PhysicalNode::inner(
            Routing::pivots(DataLayout::SortedCol, SearchMethod::BinS, vec![6, 11]).unwrap(),
            vec![
                leaf(DataLayout::SortedCol, SearchMethod::Scan, &left),
                leaf(DataLayout::SortedCol, SearchMethod::Scan, &e[3..4]),
                leaf(DataLayout::SortedCol, SearchMethod::Scan, &e[4..6]),
            ],
        )
        .unwrap();
        let idx = PhysicalIndex::new(Arc::new(root), DEFAULT_CAPACITY).unwrap();
        assert!(RangeOracle::new(&RUNNING).grid_counterexample(&idx).is_some());
        assert!(!idx.to_logical().check_correct(&ranked_tuples(&RUNNING)).unwrap().is_correct());
    }

    #[test]
    fn hash_routing_and_shape_errors() {
        assert_eq!(
            Routing::pivots(DataLayout::Hash, SearchMethod::HashS, vec![1]),
            Err(PhysicalError::Search(SearchError::HashRouting))
        );
        let r = Routing::pivots(DataLayout::SortedCol, SearchMethod::BinS, vec![5]).unwrap();
        let one = leaf(DataLayout::SortedCol, SearchMethod::BinS, &[]);
        assert!(matches!(PhysicalNode::inner(r, vec![one]), Err(PhysicalError::Shape(_))));
    }

    #[test]
    fn capacity_enforced() {
        let e = ranked(&RUNNING);
        let node = leaf(DataLayout::SortedCol, SearchMethod::BinS, &e);
        assert_eq!(
            PhysicalIndex::new(node.clone(), 5),
            Err(PhysicalError::Capacity { node: 0, entries: 6, capacity: 5 })
        );
        assert!(PhysicalIndex::new(node, 6).is_ok());
    }

    #[test]
    fn suffix_function_routing() {
        let keys: Vec<Key> = (0..64).map(|k| k * 3 + 1).collect();
        let e = ranked(&keys);
        let f = PartitioningFunction::BitSuffix { width: 2 };
        let mut buckets: Vec<Vec<(Key, Payload)>> = vec![Vec::new(); 4];
        for &(k, v) in &e {
            buckets[f.apply(k) as usize].push((k, v));
        }
        let children = buckets.iter().map(|b| leaf(DataLayout::Hash, SearchMethod::HashS, b)).collect();
        let root = PhysicalNode::inner(Routing::Function { function: f, slots: vec![0, 1, 2, 3] }, children).unwrap();
        let idx = PhysicalIndex::new(Arc::new(root), DEFAULT_CAPACITY).unwrap();
        assert_eq!(RangeOracle::new(&keys).grid_counterexample(&idx), None);
        assert_eq!(idx.entries(), e);
    }

    #[test]
    fn linear_function_routing_with_missing_bins() {
        let keys: Vec<Key> = vec![1, 2, 6, 7, 11, 12, 40, 41];
        let e = ranked(&keys);
        let f = PartitioningFunction::LinearModel { slope: 1.0 / 3.0, intercept: 0.0, bins: 20 };
        let mut slots: Vec<u64> = keys.iter().map(|&k| f.apply(k)).collect();
        slots.dedup();
        let children = slots
            .iter()
            .map(|&s| {
                let part: Vec<_> = e.iter().copied().filter(|&(k, _)| f.apply(k) == s).collect();
                leaf(DataLayout::SortedCol, SearchMethod::IntS, &part)
            })
            .collect();
        let root = PhysicalNode::inner(Routing::Function { function: f, slots }, children).unwrap();
        let idx = PhysicalIndex::new(Arc::new(root), DEFAULT_CAPACITY).unwrap();
        assert_eq!(RangeOracle::new(&keys).grid_counterexample(&idx), None);
        assert_eq!(idx.execute_point(30), None);
    }

    #[test]
    fn replace_shares_untouched_subtrees() {
        let idx = mixed_tree();
        let e = ranked(&RUNNING);
        let new = idx
            .replace(&[1], PhysicalNode::leaf(DataLayout::SortedCol, SearchMethod::ExpS, e[2..4].to_vec()).unwrap())
            .unwrap();
        assert!(Arc::ptr_eq(&idx.root().children()[0], &new.root().children()[0]));
        assert!(!Arc::ptr_eq(&idx.root().children()[1], &new.root().children()[1]));
        assert_eq!(idx.root().children()[1].active_pair(), Some((DataLayout::Tree, SearchMethod::BinS)));
        assert_eq!(RangeOracle::new(&RUNNING).grid_counterexample(&new), None);
    }

    #[test]
    fn preorder_paths() {
        let idx = mixed_tree();
        let nodes = idx.nodes();
        assert_eq!(nodes.len(), 4);
        assert_eq!(idx.path_to(0), Some(vec![]));
        assert_eq!(idx.path_to(3), Some(vec![2]));
        assert_eq!(nodes[2].parent, Some(0));
        assert_eq!(idx.height(), 2);
        assert!(idx.path_to(4).is_none());
    }

    #[test]
    fn hash_range_is_flagged() {
        let idx = mixed_tree();
        let mut cost = CostCounter::default();
        let s = idx.range_summary(1, 2, &mut cost);
        assert_eq!(s.count, 2);
        assert_eq!(cost.hash_full_scans, 1);
    }

    #[test]
    fn oracle_summary_arithmetic() {
        let o = RangeOracle::new(&RUNNING);
        let s = o.summary(2, 11);
        assert_eq!(s, RangeSummary { count: 4, payload_sum: 1 + 2 + 3 + 4, key_sum: 2 + 6 + 7 + 11 });
        assert_eq!(o.summary(13, 20), RangeSummary::default());
        assert_eq!(o.summary(0, 0), RangeSummary::default());
    }
}
