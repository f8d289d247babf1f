//! The six fundamental mutations and the distributions they are drawn from.
//!
//! Structural mutations (merges and splits) operate on pivot-routed nodes and
//! leaves; function-routed nodes only ever appear in hand-written configs and
//! are left untouched. Every mutation returns a new index and leaves its
//! input unchanged.

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{compatible, valid_pairs, DataLayout};
use crate::physical::{InnerNode, PhysicalError, PhysicalIndex, PhysicalNode, Routing};
use crate::search::SearchMethod;
use crate::{Key, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    ChangeLayout,
    ChangeSearch,
    MergeHorizontal,
    SplitHorizontal,
    MergeVertical,
    SplitVertical,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        MutationKind::ChangeLayout,
        MutationKind::ChangeSearch,
        MutationKind::MergeHorizontal,
        MutationKind::SplitHorizontal,
        MutationKind::MergeVertical,
        MutationKind::SplitVertical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::ChangeLayout => "change_layout",
            MutationKind::ChangeSearch => "change_search",
            MutationKind::MergeHorizontal => "merge_horizontal",
            MutationKind::SplitHorizontal => "split_horizontal",
            MutationKind::MergeVertical => "merge_vertical",
            MutationKind::SplitVertical => "split_vertical",
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutationAbort {
    #[error("no applicable node for {0}")]
    NoCandidate(MutationKind),
    #[error("no valid physical choice for {0}")]
    NoPhysicalChoice(MutationKind),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("precondition failed: {0}")]
    Precondition(&'static str),
    #[error("result would exceed node capacity")]
    Capacity,
    #[error(transparent)]
    Physical(#[from] PhysicalError),
    #[error("distribution has no positive weight")]
    EmptyDistribution,
}

/// A fully resolved mutation. Node ids are preorder positions in the index
/// the mutation is applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    ChangeLayout { node: usize, layout: DataLayout, search: SearchMethod },
    ChangeSearch { node: usize, search: SearchMethod },
    MergeHorizontal { parent: usize, target: usize, source: usize },
    SplitHorizontal { parent: usize, node: usize, parts: usize },
    MergeVertical { parent: usize, child: usize },
    /// `routing` is the physical choice for a leaf turned into a router.
    SplitVertical { node: usize, parts: usize, routing: Option<(DataLayout, SearchMethod)> },
}

impl Mutation {
    pub fn kind(&self) -> MutationKind {
        match self {
            Mutation::ChangeLayout { .. } => MutationKind::ChangeLayout,
            Mutation::ChangeSearch { .. } => MutationKind::ChangeSearch,
            Mutation::MergeHorizontal { .. } => MutationKind::MergeHorizontal,
            Mutation::SplitHorizontal { .. } => MutationKind::SplitHorizontal,
            Mutation::MergeVertical { .. } => MutationKind::MergeVertical,
            Mutation::SplitVertical { .. } => MutationKind::SplitVertical,
        }
    }
}

/// Weights over (layout, search) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub layout: DataLayout,
    pub search: SearchMethod,
    pub weight: f64,
}

/// Sampling distributions for mutation kind, target node and physical choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Distributions {
    /// Weight per kind, in [`MutationKind::ALL`] order.
    pub kind_weights: [f64; 6],
    /// Overrides for the uniform weight 1.0 of each valid pair.
    pub pair_weights: Vec<PairWeight>,
    /// Offer the row layout as a physical choice.
    pub include_row_layout: bool,
    /// Parts produced by one split.
    pub split_parts: usize,
}

impl Default for Distributions {
    fn default() -> Self {
        Distributions { kind_weights: [1.0; 6], pair_weights: Vec::new(), include_row_layout: false, split_parts: 2 }
    }
}

fn sample_weighted<T: Copy, R: Rng + ?Sized>(items: &[(T, f64)], rng: &mut R) -> Result<T, MutationAbort> {
    let positive: Vec<&(T, f64)> = items.iter().filter(|(_, w)| *w > 0.0 && w.is_finite()).collect();
    if positive.is_empty() {
        return Err(MutationAbort::EmptyDistribution);
    }
    let dist = WeightedIndex::new(positive.iter().map(|(_, w)| *w)).map_err(|_| MutationAbort::EmptyDistribution)?;
    Ok(positive[dist.sample(rng)].0)
}

impl Distributions {
    pub fn pair_weight(&self, layout: DataLayout, search: SearchMethod) -> f64 {
        if !compatible(layout, search) {
            return 0.0;
        }
        self.pair_weights
            .iter()
            .find(|p| p.layout == layout && p.search == search)
            .map_or(1.0, |p| p.weight)
    }

    /// Draws a mutation kind.
    pub fn draw_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MutationKind, MutationAbort> {
        let items: Vec<_> = MutationKind::ALL.iter().copied().zip(self.kind_weights).collect();
        sample_weighted(&items, rng)
    }

    /// Per-node weights for `kind`: uniform over applicable nodes, zero
    /// elsewhere.
    pub fn node_weights(&self, index: &PhysicalIndex, kind: MutationKind) -> Vec<f64> {
        let nodes = index.nodes();
        nodes
            .iter()
            .map(|r| if applicable(index, &nodes, r.id, kind, self.split_parts) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Draws a node id for `kind`.
    pub fn draw_node<R: Rng + ?Sized>(&self, index: &PhysicalIndex, kind: MutationKind, rng: &mut R) -> Result<usize, MutationAbort> {
        let items: Vec<(usize, f64)> = self.node_weights(index, kind).into_iter().enumerate().collect();
        sample_weighted(&items, rng).map_err(|_| MutationAbort::NoCandidate(kind))
    }

    /// Support of the physical distribution for `kind` on `node`: weighted
    /// pairs, zero for anything incompatible.
    pub fn pair_support(&self, kind: MutationKind, node: &PhysicalNode) -> Vec<((DataLayout, SearchMethod), f64)> {
        let routing = !node.is_leaf();
        let current = node.active_pair();
        let candidates = match kind {
            MutationKind::ChangeLayout => match current {
                Some((l, _)) => valid_pairs(routing, self.include_row_layout).into_iter().filter(|p| p.0 != l).collect(),
                None => Vec::new(),
            },
            MutationKind::ChangeSearch => match current {
                Some((l, s)) => valid_pairs(routing, self.include_row_layout)
                    .into_iter()
                    .filter(|p| p.0 == l && p.1 != s)
                    .collect(),
                None => Vec::new(),
            },
            MutationKind::SplitVertical if node.is_leaf() => valid_pairs(true, self.include_row_layout),
            _ => Vec::new(),
        };
        candidates
            .into_iter()
            .map(|p| (p, self.pair_weight(p.0, p.1)))
            .filter(|(_, w)| *w > 0.0)
            .collect()
    }

    pub fn draw_pair<R: Rng + ?Sized>(
        &self,
        kind: MutationKind,
        node: &PhysicalNode,
        rng: &mut R,
    ) -> Result<(DataLayout, SearchMethod), MutationAbort> {
        sample_weighted(&self.pair_support(kind, node), rng).map_err(|_| MutationAbort::NoPhysicalChoice(kind))
    }

    /// Draws kind, node and physical choice into a concrete mutation.
    pub fn draw<R: Rng + ?Sized>(&self, index: &PhysicalIndex, rng: &mut R) -> Result<Mutation, MutationAbort> {
        let kind = self.draw_kind(rng)?;
        self.draw_of_kind(index, kind, rng)
    }

    pub fn draw_of_kind<R: Rng + ?Sized>(
        &self,
        index: &PhysicalIndex,
        kind: MutationKind,
        rng: &mut R,
    ) -> Result<Mutation, MutationAbort> {
        let id = self.draw_node(index, kind, rng)?;
        let nodes = index.nodes();
        let r = nodes[id];
        Ok(match kind {
            MutationKind::ChangeLayout => {
                let (layout, drawn) = self.draw_pair(kind, r.node, rng)?;
                let (_, old) = r.node.active_pair().expect("applicable node has an active pair");
                let search = if compatible(layout, old) { old } else { drawn };
                Mutation::ChangeLayout { node: id, layout, search }
            }
            MutationKind::ChangeSearch => {
                let (_, search) = self.draw_pair(kind, r.node, rng)?;
                Mutation::ChangeSearch { node: id, search }
            }
            MutationKind::MergeHorizontal => {
                let pairs = mergeable_pairs(&nodes, id);
                let &(left, right) = pairs.choose(rng).ok_or(MutationAbort::NoCandidate(kind))?;
                let (target, source) = if rng.random_bool(0.5) { (left, right) } else { (right, left) };
                Mutation::MergeHorizontal { parent: id, target, source }
            }
            MutationKind::SplitHorizontal => Mutation::SplitHorizontal {
                parent: r.parent.expect("applicable node has a parent"),
                node: id,
                parts: self.split_parts,
            },
            MutationKind::MergeVertical => {
                Mutation::MergeVertical { parent: r.parent.expect("applicable node has a parent"), child: id }
            }
            MutationKind::SplitVertical => {
                let routing = if r.node.is_leaf() { Some(self.draw_pair(kind, r.node, rng)?) } else { None };
                Mutation::SplitVertical { node: id, parts: self.split_parts, routing }
            }
        })
    }
}

fn is_pivot_node(node: &PhysicalNode) -> bool {
    matches!(node, PhysicalNode::Inner(InnerNode { routing: Routing::Pivots { .. }, .. }))
}

/// Adjacent child pairs `(left, right)` of `parent` that can be merged.
fn mergeable_pairs(nodes: &[crate::physical::NodeRef<'_>], parent: usize) -> Vec<(usize, usize)> {
    if !is_pivot_node(nodes[parent].node) {
        return Vec::new();
    }
    let children: Vec<usize> = nodes.iter().filter(|r| r.parent == Some(parent)).map(|r| r.id).collect();
    children
        .windows(2)
        .filter(|w| {
            let (a, b) = (nodes[w[0]].node, nodes[w[1]].node);
            (a.is_leaf() && b.is_leaf()) || (is_pivot_node(a) && is_pivot_node(b))
        })
        .map(|w| (w[0], w[1]))
        .collect()
}

fn applicable(index: &PhysicalIndex, nodes: &[crate::physical::NodeRef<'_>], id: usize, kind: MutationKind, parts: usize) -> bool {
    let r = nodes[id];
    let node = r.node.as_ref();
    let pivot_parent = r.parent.is_some_and(|p| is_pivot_node(nodes[p].node));
    match kind {
        MutationKind::ChangeLayout => node.active_pair().is_some(),
        MutationKind::ChangeSearch => node.active_pair().is_some_and(|(l, _)| l.is_sorted_array()),
        MutationKind::MergeHorizontal => !mergeable_pairs(nodes, id).is_empty(),
        MutationKind::SplitHorizontal => {
            pivot_parent
                && (node.is_leaf() || is_pivot_node(node))
                && node.entry_count() >= parts.max(2)
                && nodes[r.parent.unwrap()].node.entry_count() < index.capacity()
        }
        MutationKind::MergeVertical => {
            pivot_parent && (is_pivot_node(node) || (node.is_leaf() && nodes[r.parent.unwrap()].node.entry_count() == 1))
        }
        MutationKind::SplitVertical => (node.is_leaf() || is_pivot_node(node)) && node.entry_count() >= parts.max(2),
    }
}

fn inner_of(node: &PhysicalNode) -> Result<(&InnerNode, &[Key], DataLayout, SearchMethod), MutationAbort> {
    match node {
        PhysicalNode::Inner(i) => match &i.routing {
            Routing::Pivots { search, pivots, store } => Ok((i, pivots, store.layout(), *search)),
            Routing::Function { .. } => Err(MutationAbort::Precondition("function-routed nodes are not restructured")),
        },
        PhysicalNode::Leaf(_) => Err(MutationAbort::Precondition("node is a leaf")),
    }
}

type LeafParts = (Vec<(Key, Payload)>, DataLayout, SearchMethod);

fn leaf_entries(node: &PhysicalNode) -> Option<LeafParts> {
    match node {
        PhysicalNode::Leaf(l) => Some((l.data.entries(), l.layout(), l.search)),
        PhysicalNode::Inner(_) => None,
    }
}

fn pivot_node(layout: DataLayout, search: SearchMethod, pivots: Vec<Key>, children: Vec<Arc<PhysicalNode>>) -> Result<PhysicalNode, MutationAbort> {
    Ok(PhysicalNode::inner(Routing::pivots(layout, search, pivots)?, children)?)
}

fn balanced(m: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|i| (i * m / parts, (i + 1) * m / parts)).collect()
}

/// Splits a leaf or pivot node into `parts` key-contiguous nodes with the
/// same physical configuration. Returns the nodes and the first key of every
/// part but the first.
fn split_node(node: &PhysicalNode, parts: usize) -> Result<(Vec<Arc<PhysicalNode>>, Vec<Key>), MutationAbort> {
    if parts == 0 || node.entry_count() < parts {
        return Err(MutationAbort::Precondition("fewer entries than parts"));
    }
    if let Some((entries, layout, search)) = leaf_entries(node) {
        let mut nodes = Vec::with_capacity(parts);
        let mut seps = Vec::with_capacity(parts - 1);
        for (i, (a, b)) in balanced(entries.len(), parts).into_iter().enumerate() {
            if i > 0 {
                seps.push(entries[a].0);
            }
            nodes.push(Arc::new(PhysicalNode::leaf(layout, search, entries[a..b].to_vec())?));
        }
        return Ok((nodes, seps));
    }
    let (inner, pivots, layout, search) = inner_of(node)?;
    let mut nodes = Vec::with_capacity(parts);
    let mut seps = Vec::with_capacity(parts - 1);
    for (i, (a, b)) in balanced(inner.children.len(), parts).into_iter().enumerate() {
        if i > 0 {
            seps.push(pivots[a - 1]);
        }
        nodes.push(Arc::new(pivot_node(layout, search, pivots[a..b - 1].to_vec(), inner.children[a..b].to_vec())?));
    }
    Ok((nodes, seps))
}

fn locate(index: &PhysicalIndex, id: usize) -> Result<(Vec<usize>, Arc<PhysicalNode>), MutationAbort> {
    let path = index.path_to(id).ok_or(MutationAbort::UnknownNode(id))?;
    let node = index.node_at(&path).ok_or(MutationAbort::UnknownNode(id))?.clone();
    Ok((path, node))
}

/// Slot of `child` under `parent`, checking the parent relation.
fn child_slot(index: &PhysicalIndex, parent: usize, child: usize) -> Result<usize, MutationAbort> {
    let nodes = index.nodes();
    let r = nodes.get(child).ok_or(MutationAbort::UnknownNode(child))?;
    if nodes.get(parent).is_none() {
        return Err(MutationAbort::UnknownNode(parent));
    }
    if r.parent != Some(parent) {
        return Err(MutationAbort::Precondition("node is not a child of the given parent"));
    }
    Ok(r.slot)
}

fn finish(index: &PhysicalIndex, path: &[usize], node: PhysicalNode) -> Result<PhysicalIndex, MutationAbort> {
    if node.entry_count() > index.capacity() {
        return Err(MutationAbort::Capacity);
    }
    index.replace(path, node).map_err(|e| match e {
        PhysicalError::Capacity { .. } => MutationAbort::Capacity,
        e => e.into(),
    })
}

/// Applies a resolved mutation to `index`, producing a new index.
pub fn apply(index: &PhysicalIndex, mutation: &Mutation) -> Result<PhysicalIndex, MutationAbort> {
    match *mutation {
        Mutation::ChangeLayout { node, layout, search } => change_layout(index, node, layout, search),
        Mutation::ChangeSearch { node, search } => change_search(index, node, search),
        Mutation::MergeHorizontal { parent, target, source } => merge_horizontal(index, parent, target, source),
        Mutation::SplitHorizontal { parent, node, parts } => split_horizontal(index, parent, node, parts),
        Mutation::MergeVertical { parent, child } => merge_vertical(index, parent, child),
        Mutation::SplitVertical { node, parts, routing } => split_vertical(index, node, parts, routing),
    }
}

/// Rebuilds the active part of `node` with a new physical configuration.
fn repack(node: &PhysicalNode, layout: DataLayout, search: SearchMethod) -> Result<PhysicalNode, MutationAbort> {
    match node {
        PhysicalNode::Leaf(l) => Ok(PhysicalNode::leaf(layout, search, l.data.entries())?),
        PhysicalNode::Inner(_) => {
            let (inner, pivots, _, _) = inner_of(node)?;
            pivot_node(layout, search, pivots.to_vec(), inner.children.clone())
        }
    }
}

pub fn change_layout(index: &PhysicalIndex, node: usize, layout: DataLayout, search: SearchMethod) -> Result<PhysicalIndex, MutationAbort> {
    let (path, current) = locate(index, node)?;
    let (old_layout, _) = current.active_pair().ok_or(MutationAbort::Precondition("node has no physical part"))?;
    if layout == old_layout {
        return Err(MutationAbort::Precondition("layout unchanged"));
    }
    if !current.is_leaf() && layout == DataLayout::Hash {
        return Err(MutationAbort::Precondition("routing parts cannot use the hash layout"));
    }
    if !compatible(layout, search) {
        return Err(MutationAbort::NoPhysicalChoice(MutationKind::ChangeLayout));
    }
    finish(index, &path, repack(&current, layout, search)?)
}

pub fn change_search(index: &PhysicalIndex, node: usize, search: SearchMethod) -> Result<PhysicalIndex, MutationAbort> {
    let (path, current) = locate(index, node)?;
    let (layout, old) = current.active_pair().ok_or(MutationAbort::Precondition("node has no physical part"))?;
    if search == old {
        return Err(MutationAbort::Precondition("search unchanged"));
    }
    if !compatible(layout, search) {
        return Err(MutationAbort::NoPhysicalChoice(MutationKind::ChangeSearch));
    }
    finish(index, &path, repack(&current, layout, search)?)
}

pub fn merge_horizontal(index: &PhysicalIndex, parent: usize, target: usize, source: usize) -> Result<PhysicalIndex, MutationAbort> {
    let ts = child_slot(index, parent, target)?;
    let ss = child_slot(index, parent, source)?;
    if ts.abs_diff(ss) != 1 {
        return Err(MutationAbort::Precondition("only adjacent siblings merge"));
    }
    let (ppath, pnode) = locate(index, parent)?;
    let (pinner, ppivots, playout, psearch) = inner_of(&pnode)?;
    let (left, right) = (ts.min(ss), ts.max(ss));
    let tnode = &pinner.children[ts];
    let (lnode, rnode) = (&pinner.children[left], &pinner.children[right]);

    let merged = match (leaf_entries(lnode), leaf_entries(rnode)) {
        (Some((mut a, _, _)), Some((b, _, _))) => {
            let (_, layout, search) = leaf_entries(tnode).expect("target is a leaf");
            a.extend(b);
            if a.len() > index.capacity() {
                return Err(MutationAbort::Capacity);
            }
            PhysicalNode::leaf(layout, search, a)?
        }
        (None, None) => {
            let (li, lp, _, _) = inner_of(lnode)?;
            let (ri, rp, _, _) = inner_of(rnode)?;
            let (_, _, layout, search) = inner_of(tnode)?;
            if li.children.len() + ri.children.len() > index.capacity() {
                return Err(MutationAbort::Capacity);
            }
            let mut pivots = lp.to_vec();
            pivots.push(ppivots[left]);
            pivots.extend_from_slice(rp);
            let mut children = li.children.clone();
            children.extend(ri.children.iter().cloned());
            pivot_node(layout, search, pivots, children)?
        }
        _ => return Err(MutationAbort::Precondition("siblings differ in partitioning")),
    };

    let mut pivots = ppivots.to_vec();
    pivots.remove(left);
    let mut children = pinner.children.clone();
    children.splice(left..=right, [Arc::new(merged)]);
    finish(index, &ppath, pivot_node(playout, psearch, pivots, children)?)
}

pub fn split_horizontal(index: &PhysicalIndex, parent: usize, node: usize, parts: usize) -> Result<PhysicalIndex, MutationAbort> {
    let slot = child_slot(index, parent, node)?;
    let (ppath, pnode) = locate(index, parent)?;
    let (pinner, ppivots, playout, psearch) = inner_of(&pnode)?;
    if parts < 2 {
        return Err(MutationAbort::Precondition("a split needs at least two parts"));
    }
    if pinner.children.len() + parts - 1 > index.capacity() {
        return Err(MutationAbort::Capacity);
    }
    let (nodes, seps) = split_node(&pinner.children[slot], parts)?;
    let mut pivots = ppivots.to_vec();
    pivots.splice(slot..slot, seps);
    let mut children = pinner.children.clone();
    children.splice(slot..=slot, nodes);
    finish(index, &ppath, pivot_node(playout, psearch, pivots, children)?)
}

pub fn merge_vertical(index: &PhysicalIndex, parent: usize, child: usize) -> Result<PhysicalIndex, MutationAbort> {
    let slot = child_slot(index, parent, child)?;
    let (ppath, pnode) = locate(index, parent)?;
    let (pinner, ppivots, playout, psearch) = inner_of(&pnode)?;
    let cnode = &pinner.children[slot];
    if cnode.is_leaf() {
        if pinner.children.len() != 1 {
            return Err(MutationAbort::Precondition("a leaf only merges into a parent it solely occupies"));
        }
        return finish(index, &ppath, cnode.as_ref().clone());
    }
    let (cinner, cpivots, _, _) = inner_of(cnode)?;
    let lower = slot.checked_sub(1).map(|i| ppivots[i]);
    let upper = ppivots.get(slot).copied();
    if cpivots.iter().any(|&p| lower.is_some_and(|l| p <= l) || upper.is_some_and(|u| p >= u)) {
        return Err(MutationAbort::Precondition("child pivots leave the parent's range"));
    }
    if pinner.children.len() - 1 + cinner.children.len() > index.capacity() {
        return Err(MutationAbort::Capacity);
    }
    let mut pivots = ppivots.to_vec();
    pivots.splice(slot..slot, cpivots.iter().copied());
    let mut children = pinner.children.clone();
    children.splice(slot..=slot, cinner.children.iter().cloned());
    finish(index, &ppath, pivot_node(playout, psearch, pivots, children)?)
}

/// Pushes the node's contents one level down into `parts` new children. A
/// leaf becomes a pivot router with the given physical choice; a router
/// hands contiguous groups of its children to new routers configured like
/// itself.
pub fn split_vertical(
    index: &PhysicalIndex,
    node: usize,
    parts: usize,
    routing: Option<(DataLayout, SearchMethod)>,
) -> Result<PhysicalIndex, MutationAbort> {
    let (path, current) = locate(index, node)?;
    if current.entry_count() < parts.max(1) || current.entry_count() == 0 {
        return Err(MutationAbort::Precondition("nothing to delegate"));
    }
    let (layout, search) = if current.is_leaf() {
        routing.ok_or(MutationAbort::NoPhysicalChoice(MutationKind::SplitVertical))?
    } else {
        let (_, _, l, s) = inner_of(&current)?;
        (l, s)
    };
    if layout == DataLayout::Hash {
        return Err(MutationAbort::Precondition("routing parts cannot use the hash layout"));
    }
    let (nodes, seps) = split_node(&current, parts)?;
    finish(index, &path, pivot_node(layout, search, seps, nodes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{bulkload, build_single_node, BulkloadSpec, PhysicalChoice};
    use crate::physical::{RangeOracle, DEFAULT_CAPACITY};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn keys(n: u64) -> Vec<Key> {
        (0..n).map(|k| k * 3 + 1).collect()
    }

    /// Two-level tree: root over 4 leaves of 25 keys, SortedCol + BinS.
    fn small_tree() -> (Vec<Key>, PhysicalIndex) {
        let k = keys(100);
        let idx = bulkload(&k, &BulkloadSpec::btree(100, 25, 4, DataLayout::SortedCol, SearchMethod::BinS)).unwrap();
        (k, idx)
    }

    /// Three-level tree: 16 leaves under 4 routers under the root.
    fn deep_tree() -> (Vec<Key>, PhysicalIndex) {
        let k = keys(160);
        let idx = bulkload(&k, &BulkloadSpec::btree(160, 10, 4, DataLayout::SortedCol, SearchMethod::BinS)).unwrap();
        (k, idx)
    }

    fn assert_correct(k: &[Key], idx: &PhysicalIndex) {
        assert_eq!(RangeOracle::new(k).grid_counterexample(idx), None);
    }

    fn grid_equal(k: &[Key], a: &PhysicalIndex, b: &PhysicalIndex) {
        let grid = crate::model::key_grid(k);
        for (i, &l) in grid.iter().enumerate() {
            for &h in &grid[i..] {
                assert_eq!(a.execute_range(l, h), b.execute_range(l, h), "[{l}, {h}]");
            }
        }
    }

    #[test]
    fn change_layout_to_tree_keeps_contents() {
        let (k, idx) = small_tree();
        let leaf = idx.nodes().iter().find(|r| r.node.is_leaf()).unwrap().id;
        let before = idx.node_at(&idx.path_to(leaf).unwrap()).unwrap().clone();
        let out = change_layout(&idx, leaf, DataLayout::Tree, SearchMethod::BinS).unwrap();
        let after = out.node_at(&out.path_to(leaf).unwrap()).unwrap();
        assert_eq!(after.active_pair(), Some((DataLayout::Tree, SearchMethod::BinS)));
        let (PhysicalNode::Leaf(a), PhysicalNode::Leaf(b)) = (before.as_ref(), after.as_ref()) else { panic!() };
        assert_eq!(a.data.entries(), b.data.entries());
        assert_correct(&k, &out);
    }

    #[test]
    fn change_layout_to_hash_forces_hash_search() {
        let (k, idx) = small_tree();
        let leaf = 1;
        let d = Distributions {
            pair_weights: valid_pairs(false, false)
                .into_iter()
                .map(|(layout, search)| PairWeight { layout, search, weight: if layout == DataLayout::Hash { 1.0 } else { 0.0 } })
                .collect(),
            ..Distributions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (layout, search) = d.draw_pair(MutationKind::ChangeLayout, idx.nodes()[leaf].node, &mut rng).unwrap();
        assert_eq!((layout, search), (DataLayout::Hash, SearchMethod::HashS));
        let out = change_layout(&idx, leaf, layout, search).unwrap();
        assert_correct(&k, &out);
        assert!(change_layout(&idx, leaf, DataLayout::Hash, SearchMethod::BinS).is_err());
    }

    #[test]
    fn inner_node_never_becomes_hash() {
        let (_, idx) = small_tree();
        assert!(matches!(
            change_layout(&idx, 0, DataLayout::Hash, SearchMethod::HashS),
            Err(MutationAbort::Precondition(_))
        ));
        let d = Distributions::default();
        let support = d.pair_support(MutationKind::ChangeLayout, idx.root());
        assert!(!support.is_empty());
        assert!(support.iter().all(|((l, _), _)| *l != DataLayout::Hash));
    }

    #[test]
    fn change_search_examples() {
        let k = keys(50);
        let idx = build_single_node(&k, DataLayout::SortedCol, SearchMethod::Scan, DEFAULT_CAPACITY).unwrap();
        let bin = change_search(&idx, 0, SearchMethod::BinS).unwrap();
        assert_eq!(bin.root().active_pair(), Some((DataLayout::SortedCol, SearchMethod::BinS)));
        let int = change_search(&bin, 0, SearchMethod::IntS).unwrap();
        grid_equal(&k, &bin, &int);

        let hash = build_single_node(&k, DataLayout::Hash, SearchMethod::HashS, DEFAULT_CAPACITY).unwrap();
        let d = Distributions::default();
        assert!(d.pair_support(MutationKind::ChangeSearch, hash.root()).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            d.draw_pair(MutationKind::ChangeSearch, hash.root(), &mut rng),
            Err(MutationAbort::NoPhysicalChoice(MutationKind::ChangeSearch))
        );
        assert!(change_search(&hash, 0, SearchMethod::BinS).is_err());
    }

    #[test]
    fn merge_collapses_ranges() {
        // Root pivots [6, 11] over leaves {1,2} {6,7} {11,12}.
        let k = vec![1u64, 2, 6, 7, 11, 12];
        let idx = bulkload(&k, &BulkloadSpec::btree(6, 2, 3, DataLayout::SortedCol, SearchMethod::BinS)).unwrap();
        let out = merge_horizontal(&idx, 0, 1, 2).unwrap();
        let PhysicalNode::Inner(root) = out.root().as_ref() else { panic!() };
        let Routing::Pivots { pivots, .. } = &root.routing else { panic!() };
        assert_eq!(pivots, &vec![11]);
        assert_eq!(root.children[0].entry_count(), 4);
        grid_equal(&k, &idx, &out);

        // Merging again leaves a single child.
        let again = merge_horizontal(&out, 0, 2, 1).unwrap();
        assert_eq!(again.root().entry_count(), 1);
        assert_correct(&k, &again);
    }

    #[test]
    fn merge_rejects_non_adjacent_and_over_capacity() {
        let (k, idx) = small_tree();
        assert!(merge_horizontal(&idx, 0, 1, 3).is_err());
        let tight = bulkload(&k, &BulkloadSpec { capacity: 30, ..BulkloadSpec::btree(100, 25, 4, DataLayout::SortedCol, SearchMethod::BinS) }).unwrap();
        assert_eq!(merge_horizontal(&tight, 0, 1, 2), Err(MutationAbort::Capacity));
    }

    #[test]
    fn merge_inner_siblings() {
        let (k, idx) = deep_tree();
        let nodes = idx.nodes();
        let routers: Vec<usize> = nodes.iter().filter(|r| r.depth == 1).map(|r| r.id).collect();
        let out = merge_horizontal(&idx, 0, routers[1], routers[2]).unwrap();
        assert_eq!(out.root().entry_count(), 3);
        assert_eq!(out.node_count(), idx.node_count() - 1);
        assert_correct(&k, &out);
    }

    #[test]
    fn split_then_merge_is_equivalent() {
        let (k, idx) = small_tree();
        let split = split_horizontal(&idx, 0, 1, 2).unwrap();
        assert_eq!(split.root().entry_count(), 5);
        assert_correct(&k, &split);
        let merged = merge_horizontal(&split, 0, 1, 2).unwrap();
        grid_equal(&k, &idx, &merged);
        assert_eq!(merged.structural_hash(), idx.structural_hash());
    }

    #[test]
    fn split_to_single_entries() {
        let (k, idx) = small_tree();
        let out = split_horizontal(&idx, 0, 1, 25).unwrap();
        assert_eq!(out.root().entry_count(), 28);
        assert_correct(&k, &out);
        assert!(split_horizontal(&idx, 0, 1, 26).is_err());
    }

    #[test]
    fn split_router_horizontally() {
        let (k, idx) = deep_tree();
        let router = idx.nodes().iter().find(|r| r.depth == 1).unwrap().id;
        let out = split_horizontal(&idx, 0, router, 2).unwrap();
        assert_eq!(out.root().entry_count(), 5);
        assert_correct(&k, &out);
    }

    #[test]
    fn merge_vertical_splices_routes() {
        let (k, idx) = deep_tree();
        let router = idx.nodes().iter().find(|r| r.depth == 1).unwrap().id;
        let out = merge_vertical(&idx, 0, router).unwrap();
        assert_eq!(out.root().entry_count(), 4 - 1 + 4);
        assert_correct(&k, &out);
    }

    #[test]
    fn merge_vertical_collapses_single_leaf() {
        let k = keys(20);
        let idx = build_single_node(&k, DataLayout::SortedCol, SearchMethod::ExpS, DEFAULT_CAPACITY).unwrap();
        let one = split_vertical(&idx, 0, 1, Some((DataLayout::Tree, SearchMethod::BinS))).unwrap();
        assert_eq!(one.node_count(), 2);
        let back = merge_vertical(&one, 0, 1).unwrap();
        assert_eq!(back.node_count(), 1);
        assert_eq!(back, idx);
    }

    #[test]
    fn merge_vertical_leaf_with_siblings_aborts() {
        let (_, idx) = small_tree();
        assert!(matches!(merge_vertical(&idx, 0, 1), Err(MutationAbort::Precondition(_))));
    }

    #[test]
    fn split_vertical_then_merge_is_equivalent() {
        let (k, idx) = small_tree();
        let split = split_vertical(&idx, 0, 2, None).unwrap();
        assert_eq!(split.height(), 3);
        assert_correct(&k, &split);
        let child = split.nodes().iter().find(|r| r.depth == 1).unwrap().id;
        let merged = merge_vertical(&split, 0, child).unwrap();
        grid_equal(&k, &idx, &merged);
    }

    #[test]
    fn split_vertical_leaf() {
        let (k, idx) = small_tree();
        let out = split_vertical(&idx, 1, 2, Some((DataLayout::SortedCol, SearchMethod::IntS))).unwrap();
        assert_eq!(out.node_count(), idx.node_count() + 2);
        assert_correct(&k, &out);

        let single = build_single_node(&[5], DataLayout::SortedCol, SearchMethod::BinS, 10).unwrap();
        assert!(split_vertical(&single, 0, 2, Some((DataLayout::SortedCol, SearchMethod::BinS))).is_err());
    }

    #[test]
    fn mutations_leave_input_untouched() {
        let (_, idx) = deep_tree();
        let before = idx.structural_hash();
        let snapshot = idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Distributions::default();
        for _ in 0..200 {
            if let Ok(m) = d.draw(&idx, &mut rng) {
                let _ = apply(&idx, &m);
            }
        }
        assert_eq!(idx.structural_hash(), before);
        assert_eq!(idx, snapshot);
    }

    #[test]
    fn node_distribution_filters() {
        let (_, idx) = small_tree();
        let d = Distributions::default();
        let w = d.node_weights(&idx, MutationKind::MergeHorizontal);
        assert_eq!(w[0], 1.0);
        assert!(w[1..].iter().all(|&x| x == 0.0));
        let single = build_single_node(&keys(10), DataLayout::Hash, SearchMethod::HashS, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            d.draw_node(&single, MutationKind::MergeHorizontal, &mut rng),
            Err(MutationAbort::NoCandidate(MutationKind::MergeHorizontal))
        );
        assert!(d.draw_node(&single, MutationKind::SplitVertical, &mut rng).is_ok());
    }

    #[test]
    fn random_draws_preserve_correctness() {
        let k = keys(300);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = bulkload(&k, &BulkloadSpec::initial(300, PhysicalChoice::Random { seed: 1 })).unwrap();
        let d = Distributions::default();
        let oracle = RangeOracle::new(&k);
        let mut applied = 0;
        for _ in 0..300 {
            let Ok(m) = d.draw(&idx, &mut rng) else { continue };
            if let Ok(next) = apply(&idx, &m) {
                assert_eq!(oracle.grid_counterexample(&next), None, "{m:?}");
                idx = next;
                applied += 1;
            }
        }
        assert!(applied > 100);
    }
}
