//! Datasets and read-only query workloads.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use crate::physical::{RangeOracle, RangeSummary};
use crate::{Key, Payload};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error("dataset keys are not strictly increasing at position {0}")]
    Unsorted(usize),
    #[error("sample contains duplicate key {0}")]
    Duplicate(Key),
    #[error("requested {requested} keys from a file of {available}")]
    TooLarge { requested: usize, available: usize },
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    keys: Vec<Key>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, keys: Vec<Key>) -> Result<Self, DataError> {
        if let Some(i) = keys.windows(2).position(|w| w[0] >= w[1]) {
            return Err(DataError::Unsorted(i + 1));
        }
        Ok(Dataset { name: name.into(), keys })
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Payload of the key at `rank`.
    pub fn payload(&self, rank: usize) -> Payload {
        rank as Payload
    }

    /// xxh3 of the little-endian key array.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Xxh3::new();
        for k in &self.keys {
            h.update(&k.to_le_bytes());
        }
        h.digest()
    }
}

/// Keys `0..n`.
pub fn gen_uni_dense(n: usize) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::InvalidWorkload("uni_dense needs n >= 1".into()));
    }
    Dataset::new("uni_dense", (0..n as Key).collect())
}

/// Synthetic skewed keys with a piecewise-linear CDF: the key space is cut
/// into segments whose densities differ by orders of magnitude. Not a real
/// dataset; a stand-in when no key file is available.
pub fn gen_skewed(n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::InvalidWorkload("skewed dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = 16usize;
    let mut keys = Vec::with_capacity(n);
    let mut next: Key = rng.random_range(0..1 << 20);
    for s in 0..segments {
        let count = (s + 1) * n / segments - s * n / segments;
        // Mean gap between 1 and 2^16.
        let max_gap: u64 = 1 << rng.random_range(0..16u32);
        for _ in 0..count {
            keys.push(next);
            next += 1 + rng.random_range(0..max_gap) * 2;
        }
    }
    Dataset::new("synthetic_skewed", keys)
}

/// Writes keys as a little-endian u64 count followed by the keys.
pub fn write_keys(path: &Path, keys: &[Key]) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&(keys.len() as u64).to_le_bytes())?;
    for k in keys {
        out.write_all(&k.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a key file written by [`write_keys`] (or any file in that format).
pub fn read_keys(path: &Path) -> Result<Vec<Key>, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(DataError::Malformed("missing element count".into()));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != count.checked_mul(8).ok_or_else(|| DataError::Malformed("count overflows".into()))? {
        return Err(DataError::Malformed(format!("header says {count} keys, body holds {} bytes", body.len())));
    }
    Ok(body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

/// Uniform sample of `target_n` keys without replacement, sorted.
pub fn load_and_sample(path: &Path, target_n: usize, seed: u64) -> Result<Dataset, DataError> {
    let all = read_keys(path)?;
    let name = path.file_stem().map_or_else(|| "file".to_string(), |s| s.to_string_lossy().into_owned());
    sample_keys(name, &all, target_n, seed)
}

pub fn sample_keys(name: String, all: &[Key], target_n: usize, seed: u64) -> Result<Dataset, DataError> {
    if target_n > all.len() {
        return Err(DataError::TooLarge { requested: target_n, available: all.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<Key> = if target_n == all.len() {
        all.to_vec()
    } else {
        rand::seq::index::sample(&mut rng, all.len(), target_n).into_iter().map(|i| all[i]).collect()
    };
    keys.sort_unstable();
    if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
        return Err(DataError::Duplicate(w[0]));
    }
    Dataset::new(name, keys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Query {
    Point { key: Key },
    Range { l: Key, h: Key },
}

/// Uniform point queries, with replacement, over ranks `idx_min..idx_max`.
pub fn gen_point_workload<R: Rng>(keys: &[Key], idx_min: usize, idx_max: usize, count: usize, rng: &mut R) -> Result<Vec<Query>, DataError> {
    if idx_min >= idx_max || idx_max > keys.len() {
        return Err(DataError::InvalidWorkload(format!("point domain [{idx_min}, {idx_max}) outside [0, {})", keys.len())));
    }
    Ok((0..count).map(|_| Query::Point { key: keys[rng.random_range(idx_min..idx_max)] }).collect())
}

/// Point queries whose ranks follow a normal distribution, clamped into the
/// dataset.
pub fn gen_normal_point_workload<R: Rng>(keys: &[Key], mean: f64, std_dev: f64, count: usize, rng: &mut R) -> Result<Vec<Query>, DataError> {
    if keys.is_empty() {
        return Err(DataError::InvalidWorkload("empty dataset".into()));
    }
    let normal = Normal::new(mean, std_dev).map_err(|e| DataError::InvalidWorkload(e.to_string()))?;
    let last = (keys.len() - 1) as f64;
    Ok((0..count)
        .map(|_| {
            let r = normal.sample(rng).round().clamp(0.0, last) as usize;
            Query::Point { key: keys[r] }
        })
        .collect())
}

/// Rank span of one range query at selectivity `sel`.
pub fn range_span(n: usize, sel: f64) -> usize {
    (n as f64 * sel).round() as usize
}

/// Range queries covering exactly `round(n * sel)` consecutive ranks each
/// (one key for `sel = 0`), lower rank uniform in `[idx_min, idx_max - span)`.
pub fn gen_range_workload<R: Rng>(
    keys: &[Key],
    sel: f64,
    idx_min: usize,
    idx_max: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Query>, DataError> {
    if !(0.0..=1.0).contains(&sel) {
        return Err(DataError::InvalidWorkload(format!("selectivity {sel} outside [0, 1]")));
    }
    let span = range_span(keys.len(), sel);
    if idx_max > keys.len() || idx_max < span || idx_max - span <= idx_min {
        return Err(DataError::InvalidWorkload(format!(
            "range domain [{idx_min}, {idx_max}) cannot hold spans of {span}"
        )));
    }
    let last = span.max(1) - 1;
    Ok((0..count)
        .map(|_| {
            let r = rng.random_range(idx_min..idx_max - span);
            Query::Range { l: keys[r], h: keys[r + last] }
        })
        .collect())
}

/// Rank interval given as fractions of the dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub const FULL: Domain = Domain { lo: 0.0, hi: 1.0 };

    pub fn ranks(self, n: usize) -> (usize, usize) {
        let at = |f: f64| ((f.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n);
        (at(self.lo), at(self.hi))
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::FULL
    }
}

/// Size-independent workload description; rank domains are fractions of the
/// dataset so one spec applies to every dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Point {
        #[serde(default)]
        domain: Domain,
        count: usize,
    },
    /// Ranks drawn from a normal distribution; mean and deviation are
    /// fractions of the dataset size.
    NormalPoint { mean: f64, std_dev: f64, count: usize },
    Range {
        sel: f64,
        #[serde(default)]
        domain: Domain,
        count: usize,
    },
    Mix { components: Vec<MixComponent>, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixComponent {
    pub proportion: f64,
    pub spec: WorkloadSpec,
}

impl WorkloadSpec {
    pub fn count(&self) -> usize {
        match self {
            WorkloadSpec::Point { count, .. }
            | WorkloadSpec::NormalPoint { count, .. }
            | WorkloadSpec::Range { count, .. }
            | WorkloadSpec::Mix { count, .. } => *count,
        }
    }

    fn with_count(&self, count: usize) -> WorkloadSpec {
        let mut s = self.clone();
        match &mut s {
            WorkloadSpec::Point { count: c, .. }
            | WorkloadSpec::NormalPoint { count: c, .. }
            | WorkloadSpec::Range { count: c, .. }
            | WorkloadSpec::Mix { count: c, .. } => *c = count,
        }
        s
    }

    pub fn generate(&self, dataset: &Dataset, seed: u64) -> Result<Vec<Query>, DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.generate_with(dataset.keys(), &mut rng)
    }

    fn generate_with<R: Rng>(&self, keys: &[Key], rng: &mut R) -> Result<Vec<Query>, DataError> {
        let n = keys.len();
        match self {
            WorkloadSpec::Point { domain, count } => {
                let (a, b) = domain.ranks(n);
                gen_point_workload(keys, a, b, *count, rng)
            }
            WorkloadSpec::NormalPoint { mean, std_dev, count } => {
                gen_normal_point_workload(keys, mean * n as f64, std_dev * n as f64, *count, rng)
            }
            WorkloadSpec::Range { sel, domain, count } => {
                let (a, b) = domain.ranks(n);
                gen_range_workload(keys, *sel, a, b, *count, rng)
            }
            WorkloadSpec::Mix { components, count } => {
                let weights: Vec<f64> = components.iter().map(|c| c.proportion).collect();
                let total: f64 = weights.iter().sum();
                if components.is_empty() || weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(DataError::InvalidWorkload("mix proportions must be non-negative and sum to 1".into()));
                }
                let mut out = Vec::with_capacity(*count);
                for (c, k) in components.iter().zip(largest_remainder(&weights, *count)) {
                    if k > 0 {
                        out.extend(c.spec.with_count(k).generate_with(keys, rng)?);
                    }
                }
                out.shuffle(rng);
                Ok(out)
            }
        }
    }
}

/// Splits `total` into integer parts proportional to `weights`.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        parts[i] += 1;
    }
    parts
}

/// How range queries are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Visit every qualifying tuple.
    #[default]
    Materialize,
    /// Only locate the first qualifying tuple.
    LowerBound,
}

/// Correct answer to one query under a [`QueryMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Point(Option<Payload>),
    Range(RangeSummary),
    LowerBound(Option<(Key, Payload)>),
}

/// A workload bound to one dataset with its precomputed answers.
#[derive(Debug, Clone)]
pub struct Workload {
    pub queries: Vec<Query>,
    pub expected: Vec<Expected>,
    pub mode: QueryMode,
    fingerprint: u64,
}

impl Workload {
    pub fn new(dataset: &Dataset, queries: Vec<Query>, mode: QueryMode) -> Self {
        let oracle = RangeOracle::new(dataset.keys());
        let expected = queries
            .iter()
            .map(|q| match (*q, mode) {
                (Query::Point { key }, _) => Expected::Point(oracle.point(key)),
                (Query::Range { l, h }, QueryMode::Materialize) => Expected::Range(oracle.summary(l, h)),
                (Query::Range { l, .. }, QueryMode::LowerBound) => Expected::LowerBound(oracle.lower_bound(l)),
            })
            .collect();
        let mut bytes = Vec::with_capacity(queries.len() * 17 + 9);
        bytes.extend_from_slice(&dataset.fingerprint().to_le_bytes());
        bytes.push(mode as u8);
        for q in &queries {
            match *q {
                Query::Point { key } => {
                    bytes.push(0);
                    bytes.extend_from_slice(&key.to_le_bytes());
                }
                Query::Range { l, h } => {
                    bytes.push(1);
                    bytes.extend_from_slice(&l.to_le_bytes());
                    bytes.extend_from_slice(&h.to_le_bytes());
                }
            }
        }
        Workload { queries, expected, mode, fingerprint: xxh3_64(&bytes) }
    }

    pub fn generate(dataset: &Dataset, spec: &WorkloadSpec, mode: QueryMode, seed: u64) -> Result<Self, DataError> {
        Ok(Workload::new(dataset, spec.generate(dataset, seed)?, mode))
    }

    /// Hash of dataset, mode and query sequence.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uni_dense_examples() {
        let d = gen_uni_dense(100_000).unwrap();
        assert_eq!(d.keys().first(), Some(&0));
        assert_eq!(d.keys().last(), Some(&99_999));
        assert!(d.keys().iter().enumerate().all(|(i, &k)| k == i as Key));
        assert_eq!(gen_uni_dense(1).unwrap().keys(), &[0]);
        assert!(gen_uni_dense(0).is_err());
    }

    #[test]
    fn skewed_is_sorted_and_seeded() {
        let a = gen_skewed(10_000, 1).unwrap();
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, gen_skewed(10_000, 1).unwrap());
        assert_ne!(a.fingerprint(), gen_skewed(10_000, 2).unwrap().fingerprint());
    }

    #[test]
    fn file_round_trip_and_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.bin");
        let all: Vec<Key> = (0..5000u64).map(|k| k * k + 7).collect();
        write_keys(&path, &all).unwrap();
        assert_eq!(read_keys(&path).unwrap(), all);

        let full = load_and_sample(&path, 5000, 0).unwrap();
        assert_eq!(full.keys(), &all[..]);
        let s = load_and_sample(&path, 100, 1).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.keys().windows(2).all(|w| w[0] < w[1]));
        assert!(s.keys().iter().all(|k| all.binary_search(k).is_ok()));
        let mut differing = 0;
        for seed in 0..10 {
            let a = load_and_sample(&path, 100, 2 * seed).unwrap();
            let b = load_and_sample(&path, 100, 2 * seed + 1).unwrap();
            differing += usize::from(a.fingerprint() != b.fingerprint());
        }
        assert_eq!(differing, 10);
        assert!(matches!(load_and_sample(&path, 5001, 0), Err(DataError::TooLarge { .. })));
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(matches!(read_keys(&path), Err(DataError::Malformed(_))));
        let mut bytes = 3u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_keys(&path), Err(DataError::Malformed(_))));

        let dup = vec![5u64, 5, 6];
        assert!(matches!(sample_keys("d".into(), &dup, 3, 0), Err(DataError::Duplicate(5))));
    }

    #[test]
    fn point_workload_examples() {
        let d = gen_uni_dense(100_000).unwrap();
        let spec = WorkloadSpec::Point { domain: Domain::FULL, count: 10_000 };
        let q = spec.generate(&d, 1).unwrap();
        assert_eq!(q.len(), 10_000);
        assert_eq!(q, spec.generate(&d, 1).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = gen_point_workload(d.keys(), 5, 6, 50, &mut rng).unwrap();
        assert!(one.iter().all(|q| *q == Query::Point { key: 5 }));
        assert!(gen_point_workload(d.keys(), 6, 6, 1, &mut rng).is_err());
    }

    #[test]
    fn point_deciles_are_uniform() {
        let d = gen_uni_dense(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let q = gen_point_workload(d.keys(), 0, 1000, 100_000, &mut rng).unwrap();
        let mut bins = [0f64; 10];
        for x in q {
            let Query::Point { key } = x else { unreachable!() };
            bins[(key / 100) as usize] += 1.0;
        }
        let chi2: f64 = bins.iter().map(|&o| (o - 10_000.0).powi(2) / 10_000.0).sum();
        // 9 degrees of freedom, p = 0.01
        assert!(chi2 < 21.67, "chi2 = {chi2}");
    }

    #[test]
    fn range_spans_are_exact() {
        let d = gen_uni_dense(100_000).unwrap();
        let spec = WorkloadSpec::Range { sel: 0.001, domain: Domain::FULL, count: 1000 };
        let oracle = RangeOracle::new(d.keys());
        for q in spec.generate(&d, 3).unwrap() {
            let Query::Range { l, h } = q else { unreachable!() };
            assert_eq!(oracle.summary(l, h).count, 100);
        }
        let zero = WorkloadSpec::Range { sel: 0.0, domain: Domain::FULL, count: 10 }.generate(&d, 3).unwrap();
        assert!(zero.iter().all(|q| matches!(q, Query::Range { l, h } if l == h)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_range_workload(d.keys(), 0.5, 60_000, 100_000, 1, &mut rng).is_err());
        assert!(gen_range_workload(d.keys(), 1.5, 0, 100_000, 1, &mut rng).is_err());
    }

    #[test]
    fn normal_points_cluster() {
        let d = gen_uni_dense(100_000).unwrap();
        let q = WorkloadSpec::NormalPoint { mean: 0.75, std_dev: 0.1, count: 20_000 }.generate(&d, 9).unwrap();
        let mean = q
            .iter()
            .map(|x| match x {
                Query::Point { key } => *key as f64,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / q.len() as f64;
        assert!((mean - 75_000.0).abs() < 500.0, "mean {mean}");
    }

    #[test]
    fn mix_respects_proportions() {
        let d = gen_uni_dense(10_000).unwrap();
        let p = |lo, hi| WorkloadSpec::Point { domain: Domain { lo, hi }, count: 0 };
        let spec = WorkloadSpec::Mix {
            components: vec![
                MixComponent { proportion: 0.2, spec: p(0.0, 0.1) },
                MixComponent { proportion: 0.1, spec: p(0.1, 0.85) },
                MixComponent { proportion: 0.5, spec: p(0.85, 1.0) },
                MixComponent {
                    proportion: 0.2,
                    spec: WorkloadSpec::Range { sel: 0.001, domain: Domain { lo: 0.1, hi: 0.85 }, count: 0 },
                },
            ],
            count: 1000,
        };
        let q = spec.generate(&d, 5).unwrap();
        assert_eq!(q.len(), 1000);
        let ranges = q.iter().filter(|x| matches!(x, Query::Range { .. })).count();
        assert_eq!(ranges, 200);
        let low = q.iter().filter(|x| matches!(x, Query::Point { key } if *key < 1000)).count();
        assert_eq!(low, 200);
        // shuffled: not all ranges at the end
        assert!(q[800..].iter().any(|x| matches!(x, Query::Point { .. })));

        let pure = WorkloadSpec::Mix {
            components: vec![
                MixComponent { proportion: 1.0, spec: p(0.0, 1.0) },
                MixComponent { proportion: 0.0, spec: WorkloadSpec::Range { sel: 0.01, domain: Domain::FULL, count: 0 } },
            ],
            count: 100,
        };
        assert!(pure.generate(&d, 0).unwrap().iter().all(|x| matches!(x, Query::Point { .. })));
        let bad = WorkloadSpec::Mix { components: vec![MixComponent { proportion: 0.5, spec: p(0.0, 1.0) }], count: 10 };
        assert!(bad.generate(&d, 0).is_err());
    }

    #[test]
    fn remainder_rounding() {
        assert_eq!(largest_remainder(&[0.2, 0.1, 0.5, 0.2], 10), vec![2, 1, 5, 2]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn workload_answers_and_fingerprint() {
        let d = gen_uni_dense(1000).unwrap();
        let q = vec![Query::Point { key: 5 }, Query::Point { key: 5000 }, Query::Range { l: 10, h: 19 }];
        let w = Workload::new(&d, q.clone(), QueryMode::Materialize);
        assert_eq!(w.expected[0], Expected::Point(Some(5)));
        assert_eq!(w.expected[1], Expected::Point(None));
        assert!(matches!(w.expected[2], Expected::Range(s) if s.count == 10));
        let lb = Workload::new(&d, q, QueryMode::LowerBound);
        assert_eq!(lb.expected[2], Expected::LowerBound(Some((10, 10))));
        assert_ne!(w.fingerprint(), lb.fingerprint());
    }
}
