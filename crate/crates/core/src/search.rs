//! Intra-node search algorithms over sorted key columns.
//!
//! Every ordered method computes the same thing, the lower bound of a probe
//! key (position of the first entry whose key is `>=` the probe), but walks
//! the column differently. The routines are generic over the integer key type
//! and over the column representation so that both the columnar and the row
//! layout share one implementation.
//!
//! A [`Probe`] is threaded through every routine. With [`NoProbe`] all
//! accounting compiles away; [`CostCounter`] tallies comparisons and node
//! visits for the deterministic cost model.

use std::fmt;

use num_traits::{PrimInt, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Integer key types the search routines accept.
pub trait SearchKey: PrimInt + ToPrimitive + fmt::Debug {}

impl<T: PrimInt + ToPrimitive + fmt::Debug> SearchKey for T {}

/// Read access to a key-sorted column.
pub trait KeyColumn<K> {
    fn len(&self) -> usize;
    fn key_at(&self, i: usize) -> K;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<K: Copy> KeyColumn<K> for [K] {
    #[inline]
    fn len(&self) -> usize {
        <[K]>::len(self)
    }

    #[inline]
    fn key_at(&self, i: usize) -> K {
        self[i]
    }
}

impl<K: Copy, V> KeyColumn<K> for [(K, V)] {
    #[inline]
    fn len(&self) -> usize {
        <[(K, V)]>::len(self)
    }

    #[inline]
    fn key_at(&self, i: usize) -> K {
        self[i].0
    }
}

/// Observer for the work a lookup performs.
pub trait Probe {
    #[inline]
    fn compare(&mut self, _count: u64) {}
    #[inline]
    fn visit_node(&mut self) {}
    #[inline]
    fn hash_probe(&mut self) {}
    /// A hash-layout node had to enumerate all of its entries.
    #[inline]
    fn hash_full_scan(&mut self, _entries: u64) {}
    /// Entries touched while materializing a range result.
    #[inline]
    fn emit(&mut self, _entries: u64) {}
}

/// Probe that records nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Probe that counts every event.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CostCounter {
    pub comparisons: u64,
    pub node_visits: u64,
    pub hash_probes: u64,
    pub hash_full_scans: u64,
    pub hash_scanned_entries: u64,
    pub emitted: u64,
}

impl Probe for CostCounter {
    #[inline]
    fn compare(&mut self, count: u64) {
        self.comparisons += count;
    }

    #[inline]
    fn visit_node(&mut self) {
        self.node_visits += 1;
    }

    #[inline]
    fn hash_probe(&mut self) {
        self.hash_probes += 1;
    }

    #[inline]
    fn hash_full_scan(&mut self, entries: u64) {
        self.hash_full_scans += 1;
        self.hash_scanned_entries += entries;
    }

    #[inline]
    fn emit(&mut self, entries: u64) {
        self.emitted += entries;
    }
}

/// Search algorithm used inside one part of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Scan,
    #[serde(rename = "bin_s")]
    BinS,
    #[serde(rename = "int_s")]
    IntS,
    #[serde(rename = "exp_s")]
    ExpS,
    #[serde(rename = "hash_s")]
    HashS,
    #[serde(rename = "lin_reg_s")]
    LinRegS,
}

impl SearchMethod {
    pub const ALL: [SearchMethod; 6] = [
        SearchMethod::Scan,
        SearchMethod::BinS,
        SearchMethod::IntS,
        SearchMethod::ExpS,
        SearchMethod::HashS,
        SearchMethod::LinRegS,
    ];

    /// Methods that locate a lower bound on a sorted column.
    pub const ORDERED: [SearchMethod; 5] = [
        SearchMethod::Scan,
        SearchMethod::BinS,
        SearchMethod::IntS,
        SearchMethod::ExpS,
        SearchMethod::LinRegS,
    ];

    pub fn is_ordered(self) -> bool {
        self != SearchMethod::HashS
    }

    pub fn name(self) -> &'static str {
        match self {
            SearchMethod::Scan => "scan",
            SearchMethod::BinS => "bin_s",
            SearchMethod::IntS => "int_s",
            SearchMethod::ExpS => "exp_s",
            SearchMethod::HashS => "hash_s",
            SearchMethod::LinRegS => "lin_reg_s",
        }
    }
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Least-squares line over `(key, position)` with error bounds that cover
/// every stored key.
///
/// Predictions are made relative to the first key so that large keys keep
/// their precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest over-prediction over the stored keys.
    pub lower: u64,
    /// Largest under-prediction over the stored keys.
    pub upper: u64,
    origin: i128,
}

impl LinearFit {
    /// Fit with no spread: every probe predicts position 0.
    pub fn degenerate() -> Self {
        LinearFit { slope: 0.0, intercept: 0.0, lower: 0, upper: 0, origin: 0 }
    }

    /// Predicted (rounded) position of `key`; monotone non-decreasing in `key`.
    #[inline]
    pub fn predict<K: SearchKey>(&self, key: K) -> i64 {
        let x = (key.to_i128().unwrap_or(i128::MAX) - self.origin) as f64;
        (self.slope * x + self.intercept).round() as i64
    }

    /// Half-open window of positions that must contain the lower bound of
    /// `key` in a column of `len` entries.
    #[inline]
    pub fn window<K: SearchKey>(&self, key: K, len: usize) -> (usize, usize) {
        let pred = self.predict(key);
        let clamp = |v: i64| v.clamp(0, len as i64) as usize;
        let lo = clamp(pred.saturating_sub(self.lower as i64));
        let hi = clamp(pred.saturating_add(self.upper as i64).saturating_add(1));
        (lo, hi.max(lo))
    }
}

/// Fits a least-squares line mapping keys to their positions and records the
/// error bounds of that line over the column.
pub fn fit_linreg<K, C>(keys: &C) -> LinearFit
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
{
    let n = keys.len();
    if n <= 1 {
        return LinearFit::degenerate();
    }
    let origin = keys.key_at(0).to_i128().unwrap_or(0);
    let xs = |i: usize| (keys.key_at(i).to_i128().unwrap_or(i128::MAX) - origin) as f64;

    let nf = n as f64;
    let mean_x = (0..n).map(xs).sum::<f64>() / nf;
    let mean_y = (nf - 1.0) / 2.0;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..n {
        let dx = xs(i) - mean_x;
        sxx += dx * dx;
        sxy += dx * (i as f64 - mean_y);
    }
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let intercept = mean_y - slope * mean_x;

    let mut fit = LinearFit { slope, intercept, lower: 0, upper: 0, origin };
    for i in 0..n {
        let err = fit.predict(keys.key_at(i)) - i as i64;
        if err > 0 {
            fit.lower = fit.lower.max(err as u64);
        } else {
            fit.upper = fit.upper.max(err.unsigned_abs());
        }
    }
    fit
}

#[inline]
pub fn scan_lower_bound<K, C, P>(keys: &C, key: K, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    scan_window(keys, key, 0, keys.len(), probe)
}

#[inline]
fn scan_window<K, C, P>(keys: &C, key: K, lo: usize, hi: usize, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    for i in lo..hi {
        if keys.key_at(i) >= key {
            probe.compare((i - lo + 1) as u64);
            return i;
        }
    }
    probe.compare((hi - lo) as u64);
    hi
}

/// Lower bound restricted to positions `lo..hi`; returns `hi` when every key
/// in the window is smaller than `key`.
#[inline]
pub fn binary_lower_bound<K, C, P>(keys: &C, key: K, mut lo: usize, mut hi: usize, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    let mut steps = 0;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        steps += 1;
        if keys.key_at(mid) < key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    probe.compare(steps);
    lo
}

/// Interpolation search: predict from the boundary keys, then shrink the
/// window to the side of the prediction that still holds the answer.
pub fn interpolation_lower_bound<K, C, P>(keys: &C, key: K, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    let n = keys.len();
    if n == 0 {
        return 0;
    }
    probe.compare(2);
    if key <= keys.key_at(0) {
        return 0;
    }
    if key > keys.key_at(n - 1) {
        return n;
    }
    // keys[lo] < key <= keys[hi]
    let (mut lo, mut hi) = (0usize, n - 1);
    let mut steps = 0;
    while hi - lo > 1 {
        let (klo, khi) = (keys.key_at(lo), keys.key_at(hi));
        if khi <= klo {
            // Flat segment, only possible on columns with repeated keys.
            probe.compare(steps);
            return scan_window(keys, key, lo + 1, hi + 1, probe);
        }
        let span = (khi - klo).to_f64().unwrap_or(f64::MAX);
        let off = (key - klo).to_f64().unwrap_or(f64::MAX);
        let guess = lo + ((off / span) * (hi - lo) as f64) as usize;
        let pred = guess.clamp(lo + 1, hi - 1);
        steps += 1;
        if keys.key_at(pred) < key {
            lo = pred;
        } else {
            hi = pred;
        }
    }
    probe.compare(steps);
    hi
}

/// Exponential search from the front, then binary search inside the last
/// doubled bracket.
pub fn exponential_lower_bound<K, C, P>(keys: &C, key: K, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    let n = keys.len();
    if n == 0 {
        return 0;
    }
    probe.compare(1);
    if keys.key_at(0) >= key {
        return 0;
    }
    let mut bound = 1usize;
    let mut steps = 0;
    while bound < n && keys.key_at(bound) < key {
        steps += 1;
        bound *= 2;
    }
    probe.compare(steps + 1);
    binary_lower_bound(keys, key, bound / 2 + 1, (bound + 1).min(n), probe)
}

/// Predict with the fitted line and correct with a scan inside the error
/// window.
pub fn linreg_lower_bound<K, C, P>(keys: &C, fit: &LinearFit, key: K, probe: &mut P) -> usize
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    let n = keys.len();
    let (lo, hi) = fit.window(key, n);
    let pos = scan_window(keys, key, lo, hi, probe);
    // The window is sound for monotone fits over this column; a fit reused on
    // a different column falls back to binary search outside it.
    if lo > 0 && keys.key_at(lo - 1) >= key {
        return binary_lower_bound(keys, key, 0, lo, probe);
    }
    if pos == hi && hi < n && keys.key_at(hi) < key {
        return binary_lower_bound(keys, key, hi, n, probe);
    }
    pos
}

/// Lower bound with an ordered method. `fit` is required for
/// [`SearchMethod::LinRegS`] and ignored otherwise. Returns `None` for
/// [`SearchMethod::HashS`], which has no ordered semantics.
#[inline]
pub fn lower_bound<K, C, P>(
    keys: &C,
    key: K,
    method: SearchMethod,
    fit: Option<&LinearFit>,
    probe: &mut P,
) -> Option<usize>
where
    K: SearchKey,
    C: KeyColumn<K> + ?Sized,
    P: Probe,
{
    Some(match method {
        SearchMethod::Scan => scan_lower_bound(keys, key, probe),
        SearchMethod::BinS => binary_lower_bound(keys, key, 0, keys.len(), probe),
        SearchMethod::IntS => interpolation_lower_bound(keys, key, probe),
        SearchMethod::ExpS => exponential_lower_bound(keys, key, probe),
        SearchMethod::LinRegS => match fit {
            Some(fit) => linreg_lower_bound(keys, fit, key, probe),
            None => linreg_lower_bound(keys, &fit_linreg(keys), key, probe),
        },
        SearchMethod::HashS => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUNNING: [u64; 6] = [1, 2, 6, 7, 11, 12];

    fn oracle(keys: &[u64], key: u64) -> usize {
        keys.iter().take_while(|&&k| k < key).count()
    }

    fn all_ordered(keys: &[u64], key: u64) -> Vec<(SearchMethod, usize)> {
        let fit = fit_linreg(keys);
        SearchMethod::ORDERED
            .iter()
            .map(|&m| (m, lower_bound(keys, key, m, Some(&fit), &mut NoProbe).unwrap()))
            .collect()
    }

    #[test]
    fn binary_search_on_running_example() {
        assert_eq!(oracle(&RUNNING, 7), 3);
        assert_eq!(binary_lower_bound(&RUNNING[..], 7u64, 0, 6, &mut NoProbe), 3);
    }

    #[test]
    fn below_minimum_and_above_maximum() {
        for (m, pos) in all_ordered(&RUNNING, 0) {
            assert_eq!(pos, 0, "{m}");
        }
        for (m, pos) in all_ordered(&RUNNING, 13) {
            assert_eq!(pos, 6, "{m}");
        }
    }

    #[test]
    fn every_probe_on_running_example_matches_scan() {
        for key in 0..=14u64 {
            let expected = oracle(&RUNNING, key);
            for (m, pos) in all_ordered(&RUNNING, key) {
                assert_eq!(pos, expected, "{m} key={key}");
            }
        }
    }

    #[test]
    fn hash_search_has_no_lower_bound() {
        assert_eq!(lower_bound(&RUNNING[..], 7u64, SearchMethod::HashS, None, &mut NoProbe), None);
    }

    #[test]
    fn dense_fit_is_exact() {
        let keys: Vec<u64> = (0..1000).collect();
        let fit = fit_linreg(&keys[..]);
        assert!((fit.slope - 1.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!(fit.intercept.abs() < 1e-9, "intercept {}", fit.intercept);
        assert_eq!((fit.lower, fit.upper), (0, 0));
    }

    #[test]
    fn running_example_fit_covers_every_key() {
        let fit = fit_linreg(&RUNNING[..]);
        for (pos, &k) in RUNNING.iter().enumerate() {
            let pred = fit.predict(k);
            assert!(pred - fit.lower as i64 <= pos as i64 && pos as i64 <= pred + fit.upper as i64);
        }
    }

    #[test]
    fn single_key_fit_predicts_zero() {
        let fit = fit_linreg(&[42u64][..]);
        assert_eq!(fit, LinearFit::degenerate());
        for probe in [0u64, 42, 1 << 40] {
            assert_eq!(fit.predict(probe), 0);
        }
    }

    #[test]
    fn generic_over_key_width_and_row_columns() {
        let keys32: Vec<u32> = vec![3, 9, 27, 81];
        assert_eq!(interpolation_lower_bound(&keys32[..], 10u32, &mut NoProbe), 2);
        let rows: Vec<(u64, u64)> = RUNNING.iter().map(|&k| (k, k * 10)).collect();
        assert_eq!(exponential_lower_bound(&rows[..], 11u64, &mut NoProbe), 4);
    }

    #[test]
    fn counter_tracks_scan_comparisons() {
        let mut cost = CostCounter::default();
        scan_lower_bound(&RUNNING[..], 7u64, &mut cost);
        assert_eq!(cost.comparisons, 4);
    }

    #[test]
    fn extreme_keys_do_not_break_linreg() {
        let keys = [0u64, 1, u64::MAX - 1, u64::MAX];
        let fit = fit_linreg(&keys[..]);
        for probe in [0u64, 1, 2, u64::MAX / 2, u64::MAX - 1, u64::MAX] {
            assert_eq!(linreg_lower_bound(&keys[..], &fit, probe, &mut NoProbe), oracle(&keys, probe));
        }
    }
}
