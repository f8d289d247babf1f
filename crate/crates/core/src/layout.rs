//! Physical data layouts for the key/value part of a node and the
//! layout/search compatibility rules.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{self, LinearFit, Probe, SearchMethod};
use crate::Key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataLayout {
    /// Keys and values in two parallel sorted arrays.
    SortedCol,
    /// Sorted `(key, value)` pairs in one array.
    SortedRow,
    /// Static chained hash table.
    Hash,
    /// Balanced ordered tree.
    Tree,
}

impl DataLayout {
    pub const ALL: [DataLayout; 4] = [DataLayout::SortedCol, DataLayout::SortedRow, DataLayout::Hash, DataLayout::Tree];

    pub fn name(self) -> &'static str {
        match self {
            DataLayout::SortedCol => "sorted_col",
            DataLayout::SortedRow => "sorted_row",
            DataLayout::Hash => "hash",
            DataLayout::Tree => "tree",
        }
    }

    pub fn is_sorted_array(self) -> bool {
        matches!(self, DataLayout::SortedCol | DataLayout::SortedRow)
    }
}

impl fmt::Display for DataLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("search method {search} is not compatible with layout {layout}")]
    Incompatible { layout: DataLayout, search: SearchMethod },
    #[error("hash layout cannot hold routing information")]
    HashRouting,
    #[error("keys are not strictly increasing at position {0}")]
    Unsorted(usize),
}

/// Whether `search` can run on `layout`.
pub fn compatible(layout: DataLayout, search: SearchMethod) -> bool {
    match layout {
        DataLayout::SortedCol | DataLayout::SortedRow => search.is_ordered(),
        DataLayout::Hash => search == SearchMethod::HashS,
        DataLayout::Tree => search == SearchMethod::BinS,
    }
}

/// Compatible `(layout, search)` pairs for a node part. Routing parts never
/// use hashing; the row layout is only offered on request.
pub fn valid_pairs(routing: bool, with_row: bool) -> Vec<(DataLayout, SearchMethod)> {
    let mut out = Vec::new();
    for layout in DataLayout::ALL {
        if (routing && layout == DataLayout::Hash) || (!with_row && layout == DataLayout::SortedRow) {
            continue;
        }
        for search in SearchMethod::ALL {
            if compatible(layout, search) {
                out.push((layout, search));
            }
        }
    }
    out
}

/// Chained hash table laid out as one bucket-offset array over contiguous
/// key and value arrays. Bucket count is a power of two no smaller than the
/// number of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainedHash<V> {
    shift: u32,
    bucket_start: Vec<u32>,
    keys: Vec<Key>,
    values: Vec<V>,
}

const FIB: u64 = 0x9E37_79B9_7F4A_7C15;

impl<V: Copy> ChainedHash<V> {
    pub fn build(entries: &[(Key, V)]) -> Self {
        let buckets = entries.len().max(1).next_power_of_two();
        let bits = buckets.trailing_zeros();
        let shift = 64 - bits;
        let bucket_of = |k: Key| if bits == 0 { 0 } else { (k.wrapping_mul(FIB) >> shift) as usize };

        let mut bucket_start = vec![0u32; buckets + 1];
        for &(k, _) in entries {
            bucket_start[bucket_of(k) + 1] += 1;
        }
        for b in 0..buckets {
            bucket_start[b + 1] += bucket_start[b];
        }
        let mut fill: Vec<u32> = bucket_start[..buckets].to_vec();
        let mut slots: Vec<Option<(Key, V)>> = vec![None; entries.len()];
        for &(k, v) in entries {
            let b = bucket_of(k);
            slots[fill[b] as usize] = Some((k, v));
            fill[b] += 1;
        }
        let (keys, values) = slots.into_iter().map(|s| s.expect("every slot filled")).unzip();
        ChainedHash { shift: if bits == 0 { 64 } else { shift }, bucket_start, keys, values }
    }

    #[inline]
    fn bucket(&self, key: Key) -> usize {
        if self.shift >= 64 {
            0
        } else {
            (key.wrapping_mul(FIB) >> self.shift) as usize
        }
    }

    #[inline]
    pub fn get<P: Probe>(&self, key: Key, probe: &mut P) -> Option<V> {
        probe.hash_probe();
        let b = self.bucket(key);
        let (a, e) = (self.bucket_start[b] as usize, self.bucket_start[b + 1] as usize);
        for i in a..e {
            if self.keys[i] == key {
                probe.compare((i - a + 1) as u64);
                return Some(self.values[i]);
            }
        }
        probe.compare((e - a) as u64);
        None
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_start.len() - 1
    }

    /// Entries in storage order (not key order).
    pub fn iter(&self) -> impl Iterator<Item = (Key, V)> + '_ {
        self.keys.iter().copied().zip(self.values.iter().copied())
    }
}

/// Contents of one node part realized in a concrete layout.
#[derive(Debug, Clone, PartialEq)]
pub enum DataStore<V> {
    Col { keys: Vec<Key>, values: Vec<V>, fit: Option<LinearFit> },
    Row { rows: Vec<(Key, V)>, fit: Option<LinearFit> },
    Hash(ChainedHash<V>),
    Tree(BTreeMap<Key, V>),
}

impl<V: Copy> DataStore<V> {
    /// Builds the layout from entries sorted by strictly increasing key.
    pub fn build(layout: DataLayout, search: SearchMethod, entries: Vec<(Key, V)>) -> Result<Self, SearchError> {
        if !compatible(layout, search) {
            return Err(SearchError::Incompatible { layout, search });
        }
        if let Some(i) = entries.windows(2).position(|w| w[0].0 >= w[1].0) {
            return Err(SearchError::Unsorted(i + 1));
        }
        let wants_fit = search == SearchMethod::LinRegS;
        Ok(match layout {
            DataLayout::SortedCol => {
                let (keys, values): (Vec<Key>, Vec<V>) = entries.into_iter().unzip();
                let fit = wants_fit.then(|| search::fit_linreg(&keys[..]));
                DataStore::Col { keys, values, fit }
            }
            DataLayout::SortedRow => {
                let fit = wants_fit.then(|| search::fit_linreg::<Key, _>(&entries[..]));
                DataStore::Row { rows: entries, fit }
            }
            DataLayout::Hash => DataStore::Hash(ChainedHash::build(&entries)),
            DataLayout::Tree => DataStore::Tree(entries.into_iter().collect()),
        })
    }

    pub fn layout(&self) -> DataLayout {
        match self {
            DataStore::Col { .. } => DataLayout::SortedCol,
            DataStore::Row { .. } => DataLayout::SortedRow,
            DataStore::Hash(_) => DataLayout::Hash,
            DataStore::Tree(_) => DataLayout::Tree,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DataStore::Col { keys, .. } => keys.len(),
            DataStore::Row { rows, .. } => rows.len(),
            DataStore::Hash(h) => h.len(),
            DataStore::Tree(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries in key order.
    pub fn entries(&self) -> Vec<(Key, V)> {
        match self {
            DataStore::Col { keys, values, .. } => keys.iter().copied().zip(values.iter().copied()).collect(),
            DataStore::Row { rows, .. } => rows.clone(),
            DataStore::Hash(h) => {
                let mut e: Vec<_> = h.iter().collect();
                e.sort_unstable_by_key(|&(k, _)| k);
                e
            }
            DataStore::Tree(t) => t.iter().map(|(&k, &v)| (k, v)).collect(),
        }
    }

    pub fn first_key(&self) -> Option<Key> {
        match self {
            DataStore::Col { keys, .. } => keys.first().copied(),
            DataStore::Row { rows, .. } => rows.first().map(|r| r.0),
            DataStore::Hash(h) => h.iter().map(|(k, _)| k).min(),
            DataStore::Tree(t) => t.keys().next().copied(),
        }
    }

    fn sorted_lower_bound<P: Probe>(&self, search: SearchMethod, key: Key, probe: &mut P) -> usize {
        match self {
            DataStore::Col { keys, fit, .. } => search::lower_bound(&keys[..], key, search, fit.as_ref(), probe),
            DataStore::Row { rows, fit } => search::lower_bound(&rows[..], key, search, fit.as_ref(), probe),
            _ => unreachable!("only called on sorted arrays"),
        }
        .expect("ordered search on sorted layout")
    }

    #[inline]
    fn sorted_at(&self, i: usize) -> (Key, V) {
        match self {
            DataStore::Col { keys, values, .. } => (keys[i], values[i]),
            DataStore::Row { rows, .. } => rows[i],
            _ => unreachable!("only called on sorted arrays"),
        }
    }

    #[inline]
    fn tree_descent<P: Probe>(t: &BTreeMap<Key, V>, probe: &mut P) {
        probe.compare(t.len().max(1).ilog2() as u64 + 1);
    }

    /// Value stored under exactly `key`.
    #[inline]
    pub fn get<P: Probe>(&self, search: SearchMethod, key: Key, probe: &mut P) -> Option<V> {
        match self {
            DataStore::Hash(h) => h.get(key, probe),
            DataStore::Tree(t) => {
                Self::tree_descent(t, probe);
                t.get(&key).copied()
            }
            _ => {
                let i = self.sorted_lower_bound(search, key, probe);
                (i < self.len()).then(|| self.sorted_at(i)).filter(|e| e.0 == key).map(|e| e.1)
            }
        }
    }

    /// Value of the greatest key `<= key`.
    #[inline]
    pub fn floor<P: Probe>(&self, search: SearchMethod, key: Key, probe: &mut P) -> Option<V> {
        match self {
            DataStore::Hash(h) => {
                probe.hash_full_scan(h.len() as u64);
                h.iter().filter(|&(k, _)| k <= key).max_by_key(|&(k, _)| k).map(|e| e.1)
            }
            DataStore::Tree(t) => {
                Self::tree_descent(t, probe);
                t.range(..=key).next_back().map(|(_, &v)| v)
            }
            _ => {
                let i = self.sorted_lower_bound(search, key, probe);
                if i < self.len() && self.sorted_at(i).0 == key {
                    Some(self.sorted_at(i).1)
                } else if i > 0 {
                    Some(self.sorted_at(i - 1).1)
                } else {
                    None
                }
            }
        }
    }

    /// First entry whose key is `>= key`.
    #[inline]
    pub fn lower_bound_entry<P: Probe>(&self, search: SearchMethod, key: Key, probe: &mut P) -> Option<(Key, V)> {
        match self {
            DataStore::Hash(h) => {
                probe.hash_full_scan(h.len() as u64);
                h.iter().filter(|&(k, _)| k >= key).min_by_key(|&(k, _)| k)
            }
            DataStore::Tree(t) => {
                Self::tree_descent(t, probe);
                t.range(key..).next().map(|(&k, &v)| (k, v))
            }
            _ => {
                let i = self.sorted_lower_bound(search, key, probe);
                (i < self.len()).then(|| self.sorted_at(i))
            }
        }
    }

    /// Calls `f` for every entry with `l <= key <= h`; in key order except
    /// for the hash layout, which enumerates all of its entries.
    #[inline]
    pub fn for_each_in<P: Probe>(&self, search: SearchMethod, l: Key, h: Key, probe: &mut P, mut f: impl FnMut(Key, V)) {
        match self {
            DataStore::Hash(table) => {
                probe.hash_full_scan(table.len() as u64);
                for (k, v) in table.iter() {
                    if l <= k && k <= h {
                        f(k, v);
                    }
                }
            }
            DataStore::Tree(t) => {
                Self::tree_descent(t, probe);
                for (&k, &v) in t.range(l..=h) {
                    probe.emit(1);
                    f(k, v);
                }
            }
            _ => {
                let mut i = self.sorted_lower_bound(search, l, probe);
                let n = self.len();
                while i < n {
                    let (k, v) = self.sorted_at(i);
                    if k > h {
                        break;
                    }
                    probe.emit(1);
                    f(k, v);
                    i += 1;
                }
            }
        }
    }

    /// Calls `f` for every entry with `key >= from` in key order until it
    /// returns false.
    pub fn walk_from<P: Probe>(&self, search: SearchMethod, from: Key, probe: &mut P, mut f: impl FnMut(Key, V) -> bool) {
        match self {
            DataStore::Hash(_) => {
                let mut rest: Vec<(Key, V)> = Vec::new();
                self.for_each_in(search, from, Key::MAX, probe, |k, v| rest.push((k, v)));
                rest.sort_unstable_by_key(|e| e.0);
                for (k, v) in rest {
                    if !f(k, v) {
                        break;
                    }
                }
            }
            DataStore::Tree(t) => {
                Self::tree_descent(t, probe);
                for (&k, &v) in t.range(from..) {
                    if !f(k, v) {
                        break;
                    }
                }
            }
            _ => {
                let n = self.len();
                let mut i = self.sorted_lower_bound(search, from, probe);
                while i < n {
                    let (k, v) = self.sorted_at(i);
                    if !f(k, v) {
                        break;
                    }
                    i += 1;
                }
            }
        }
    }
}
