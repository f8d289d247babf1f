//! Genetic search over physical index configurations.

use std::collections::{HashMap, HashSet};
use std::hint::black_box;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{derive_seeds, init_population, BuildError, BulkloadSpec, PhysicalChoice};
use crate::mutation::{self, Distributions, MutationKind};
use crate::physical::{PhysicalIndex, DEFAULT_CAPACITY};
use crate::search::{CostCounter, NoProbe, Probe};
use crate::workload::{Expected, Query, QueryMode, Workload};
use crate::Key;

#[derive(Debug, Error)]
pub enum GeneticError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("empty population")]
    EmptyPopulation,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("query {position} ({query:?}) returned {got}, expected {expected}")]
    Incorrect { position: usize, query: Query, got: String, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TournamentSize {
    Absolute(usize),
    /// Share of the current population, in percent.
    Percent(f64),
}

impl TournamentSize {
    /// Sample size for a population of `len`, at least 1 and at most `len`.
    pub fn resolve(self, len: usize) -> usize {
        let raw = match self {
            TournamentSize::Absolute(s) => s,
            TournamentSize::Percent(p) => (p / 100.0 * len as f64).round() as usize,
        };
        raw.clamp(1, len.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneticParams {
    pub generations: u64,
    pub s_init: usize,
    /// Mutants drawn per generation.
    pub s_max: usize,
    /// Population capacity.
    pub s_pi: usize,
    pub s_t: TournamentSize,
    /// Mutation chain length; only 1 is supported.
    pub s_ch: usize,
    /// Admission percentile in [0, 100]; 0 admits every mutant.
    pub q: f64,
    /// Timed runs per fitness measurement.
    pub c: usize,
    pub master_seed: u64,
    /// Leaves and fanout of the randomly configured initial bulkloads.
    pub initial_leaves: usize,
    pub initial_fanout: usize,
}

impl Default for GeneticParams {
    fn default() -> Self {
        GeneticParams {
            generations: 2000,
            s_init: 10,
            s_max: 10,
            s_pi: 50,
            s_t: TournamentSize::Absolute(25),
            s_ch: 1,
            q: 50.0,
            c: 5,
            master_seed: 0,
            initial_leaves: 100,
            initial_fanout: 10,
        }
    }
}

impl GeneticParams {
    pub fn validate(&self) -> Result<(), GeneticError> {
        let fail = |m: String| Err(GeneticError::Params(m));
        if self.s_init == 0 || self.s_init > self.s_pi {
            return fail(format!("need 1 <= s_init <= s_pi, got s_init={} s_pi={}", self.s_init, self.s_pi));
        }
        match self.s_t {
            TournamentSize::Absolute(s) if s == 0 || s > self.s_pi => {
                return fail(format!("need 1 <= s_t <= s_pi, got {s}"));
            }
            TournamentSize::Percent(p) if !(p > 0.0 && p <= 100.0) => return fail(format!("s_t percent {p} outside (0, 100]")),
            _ => {}
        }
        if self.s_ch != 1 {
            return fail(format!("mutation chains of length {} are not supported", self.s_ch));
        }
        if !(0.0..=100.0).contains(&self.q) {
            return fail(format!("q={} outside [0, 100]", self.q));
        }
        if self.c == 0 || self.c.is_multiple_of(2) {
            return fail(format!("c={} must be odd and positive", self.c));
        }
        if self.initial_leaves == 0 || self.initial_fanout < 2 {
            return fail("initial shape needs at least one leaf and fanout >= 2".into());
        }
        Ok(())
    }

    fn initial_shape(&self, n: usize) -> BulkloadSpec {
        let leaves = self.initial_leaves.min(n).max(1);
        BulkloadSpec {
            leaf_count: leaves,
            leaf_fill: n.div_ceil(leaves).max(1),
            fanout: self.initial_fanout,
            physical: PhysicalChoice::Random { seed: 0 },
            capacity: DEFAULT_CAPACITY.max(n),
        }
    }
}

/// Weights of the analytic cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub node_visit: u64,
    pub comparison: u64,
    pub hash_probe: u64,
    pub hash_scanned_entry: u64,
    pub emitted: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { node_visit: 20, comparison: 4, hash_probe: 10, hash_scanned_entry: 2, emitted: 1 }
    }
}

impl CostWeights {
    pub fn cost(&self, c: &CostCounter) -> u64 {
        c.node_visits * self.node_visit
            + c.comparisons * self.comparison
            + c.hash_probes * self.hash_probe
            + c.hash_scanned_entries * self.hash_scanned_entry
            + c.emitted * self.emitted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FitnessMode {
    /// Median wall-clock time of `c` shuffled runs.
    Measured,
    /// Deterministic weighted operation count.
    CostModel { weights: CostWeights },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub median_ns: u64,
    pub runs_ns: Vec<u64>,
    pub workload_fingerprint: u64,
    /// Milliseconds since the Unix epoch.
    pub evaluated_at_ms: u64,
}

/// Exact median of an odd-length sample; the lower middle otherwise.
pub fn median(values: &[u64]) -> u64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

#[inline]
fn answer<P: Probe>(index: &PhysicalIndex, query: Query, mode: QueryMode, probe: &mut P) -> Expected {
    match (query, mode) {
        (Query::Point { key }, _) => Expected::Point(index.execute_point_probed(key, probe)),
        (Query::Range { l, h }, QueryMode::Materialize) => Expected::Range(index.range_summary(l, h, probe)),
        (Query::Range { l, .. }, QueryMode::LowerBound) => Expected::LowerBound(index.execute_lower_bound(l, probe)),
    }
}

#[inline]
fn fold(acc: u64, e: Expected) -> u64 {
    let x = match e {
        Expected::Point(p) => p.map_or(u64::MAX, |v| v),
        Expected::Range(s) => s.count ^ s.payload_sum,
        Expected::LowerBound(lb) => lb.map_or(u64::MAX, |(k, v)| k ^ v),
    };
    acc.rotate_left(5) ^ x
}

/// Runs every query once and compares against the precomputed answers.
pub fn verify_workload<P: Probe>(index: &PhysicalIndex, workload: &Workload, probe: &mut P) -> Result<(), EvalError> {
    for (position, (q, want)) in workload.queries.iter().zip(&workload.expected).enumerate() {
        let got = answer(index, *q, workload.mode, probe);
        if got != *want {
            return Err(EvalError::Incorrect {
                position,
                query: *q,
                got: format!("{got:?}"),
                expected: format!("{want:?}"),
            });
        }
    }
    Ok(())
}

/// Executes `queries` in order and returns the elapsed nanoseconds.
pub fn time_queries(index: &PhysicalIndex, queries: &[Query], mode: QueryMode) -> u64 {
    let start = Instant::now();
    let mut acc = 0u64;
    for q in queries {
        acc = fold(acc, answer(index, *q, mode, &mut NoProbe));
    }
    black_box(acc);
    start.elapsed().as_nanos() as u64
}

/// Fitness evaluation with a cache keyed by structural hash and workload.
#[derive(Debug)]
pub struct Evaluator {
    workload: Workload,
    mode: FitnessMode,
    c: usize,
    rng: ChaCha8Rng,
    cache: HashMap<(u64, u64), FitnessRecord>,
    measurements: u64,
    cache_hits: u64,
}

impl Evaluator {
    pub fn new(workload: Workload, mode: FitnessMode, c: usize, seed: u64) -> Self {
        Evaluator {
            workload,
            mode,
            c: c.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: HashMap::new(),
            measurements: 0,
            cache_hits: 0,
        }
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn mode(&self) -> FitnessMode {
        self.mode
    }

    /// Indexes evaluated without a cache hit.
    pub fn measurements(&self) -> u64 {
        self.measurements
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits
    }

    pub fn evaluate(&mut self, index: &PhysicalIndex) -> Result<FitnessRecord, EvalError> {
        self.evaluate_hashed(index, index.structural_hash())
    }

    pub fn evaluate_hashed(&mut self, index: &PhysicalIndex, hash: u64) -> Result<FitnessRecord, EvalError> {
        let key = (hash, self.workload.fingerprint());
        if let Some(r) = self.cache.get(&key) {
            self.cache_hits += 1;
            return Ok(r.clone());
        }
        let record = self.measure(index)?;
        self.measurements += 1;
        self.cache.insert(key, record.clone());
        Ok(record)
    }

    /// Evaluates without consulting or filling the cache.
    pub fn measure(&mut self, index: &PhysicalIndex) -> Result<FitnessRecord, EvalError> {
        let runs_ns = match self.mode {
            FitnessMode::CostModel { weights } => {
                let mut counter = CostCounter::default();
                verify_workload(index, &self.workload, &mut counter)?;
                vec![weights.cost(&counter)]
            }
            FitnessMode::Measured => {
                // untimed warm-up doubles as the correctness check
                verify_workload(index, &self.workload, &mut NoProbe)?;
                let mut queries = self.workload.queries.clone();
                (0..self.c)
                    .map(|_| {
                        queries.shuffle(&mut self.rng);
                        time_queries(index, &queries, self.workload.mode)
                    })
                    .collect()
            }
        };
        let evaluated_at_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        Ok(FitnessRecord {
            median_ns: median(&runs_ns),
            runs_ns,
            workload_fingerprint: self.workload.fingerprint(),
            evaluated_at_ms,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub index: PhysicalIndex,
    pub hash: u64,
    pub fitness: FitnessRecord,
    /// Generation of admission; 0 for the initial population.
    pub born: u64,
}

/// Bounded set of individuals without structural duplicates.
#[derive(Debug, Clone)]
pub struct Population {
    members: Vec<Member>,
    capacity: usize,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population { members: Vec::new(), capacity }
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, hash: u64) -> bool {
        self.members.iter().any(|m| m.hash == hash)
    }

    fn position(&self, hash: u64) -> Option<usize> {
        self.members.iter().position(|m| m.hash == hash)
    }

    /// Fittest member; earlier members win ties.
    pub fn best(&self) -> Option<&Member> {
        self.members.iter().reduce(|a, b| if b.fitness.median_ns < a.fitness.median_ns { b } else { a })
    }

    fn worst_position(&self, exclude: Option<usize>) -> Option<usize> {
        (0..self.members.len())
            .filter(|&i| Some(i) != exclude)
            .reduce(|a, b| if self.members[b].fitness.median_ns > self.members[a].fitness.median_ns { b } else { a })
    }

    /// Inserts unless full or duplicate.
    fn push(&mut self, member: Member) -> bool {
        if self.members.len() >= self.capacity || self.contains(member.hash) {
            return false;
        }
        self.members.push(member);
        true
    }
}

/// Outcome of one tournament.
#[derive(Debug, Clone)]
pub struct Tournament {
    /// Position of the fittest sampled member.
    pub best: usize,
    /// Admission bound; `u64::MAX` admits everything.
    pub threshold: u64,
    /// Hashes of the sampled members.
    pub sample: Vec<u64>,
}

/// Percentile of sorted values with linear interpolation.
fn percentile(sorted: &[u64], pct: f64) -> u64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    (sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac).round() as u64
}

/// Draws a sample of `s_t` members, returning its fittest member and the
/// fitness a mutant must not exceed to enter the population.
///
/// With `q = 50` the bound is the sample median, with `q = 100` the fittest
/// sampled value, and with `q = 0` everything is admitted.
pub fn tournament_selection<R: rand::Rng>(
    population: &Population,
    s_t: TournamentSize,
    q: f64,
    rng: &mut R,
) -> Result<Tournament, GeneticError> {
    if population.is_empty() {
        return Err(GeneticError::EmptyPopulation);
    }
    let m = population.members();
    let size = s_t.resolve(m.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, m.len(), size).into_vec();
    picked.sort_unstable();
    let best = *picked
        .iter()
        .reduce(|a, b| if m[*b].fitness.median_ns < m[*a].fitness.median_ns { b } else { a })
        .expect("non-empty sample");
    let threshold = if q <= 0.0 {
        u64::MAX
    } else {
        let mut f: Vec<u64> = picked.iter().map(|&i| m[i].fitness.median_ns).collect();
        f.sort_unstable();
        percentile(&f, 100.0 - q)
    };
    Ok(Tournament { best, threshold, sample: picked.iter().map(|&i| m[i].hash).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Admitted,
    /// Fitness above the tournament threshold.
    Rejected,
    /// Structurally equal to a member; not measured.
    Duplicate,
    /// Draw or application aborted.
    Aborted,
    /// Admissible, but the only evictable member was the global best.
    Protected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: u64,
    /// Best fitness in the population after this attempt.
    pub best_fitness_ns: u64,
    pub population_size: usize,
    pub mutation_kind: Option<MutationKind>,
    pub admitted: bool,
    pub outcome: Outcome,
    pub mutant_fitness_ns: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub measurements: u64,
    pub cache_hits: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub duplicates: u64,
    pub aborted: u64,
    pub protected: u64,
    /// Distinct structural hashes seen, initial population included.
    pub distinct_hashes: u64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Member,
    pub initial_best: Member,
    pub population: Population,
    pub trace: Vec<TraceRow>,
    pub stats: SearchStats,
}

/// Runs the search on `keys`. `on_row` sees every trace row as it is produced.
pub fn genetic_search(
    params: &GeneticParams,
    keys: &[Key],
    distributions: &Distributions,
    evaluator: &mut Evaluator,
    mut on_row: impl FnMut(&TraceRow),
) -> Result<SearchOutcome, GeneticError> {
    params.validate()?;
    let seeds = derive_seeds(params.master_seed, 3);
    let mut select_rng = ChaCha8Rng::seed_from_u64(seeds[1]);
    let mut mutate_rng = ChaCha8Rng::seed_from_u64(seeds[2]);
    let base_measurements = evaluator.measurements();
    let base_hits = evaluator.cache_hits();

    let mut population = Population::new(params.s_pi);
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stats = SearchStats::default();
    for index in init_population(keys, params.s_init, &params.initial_shape(keys.len()), seeds[0])? {
        let hash = index.structural_hash();
        seen.insert(hash);
        if population.contains(hash) {
            stats.duplicates += 1;
            continue;
        }
        let fitness = evaluator.evaluate_hashed(&index, hash)?;
        population.push(Member { index, hash, fitness, born: 0 });
    }
    let initial_best = population.best().ok_or(GeneticError::EmptyPopulation)?.clone();

    let mut trace = Vec::new();
    for generation in 1..=params.generations {
        let t = tournament_selection(&population, params.s_t, params.q, &mut select_rng)?;
        let parent = population.members()[t.best].index.clone();
        for _ in 0..params.s_max {
            let drawn = distributions.draw(&parent, &mut mutate_rng);
            let kind = drawn.as_ref().ok().map(|m| m.kind());
            let mutant = drawn.and_then(|m| mutation::apply(&parent, &m));
            let (outcome, mutant_fitness) = match mutant {
                Err(_) => (Outcome::Aborted, None),
                Ok(index) => {
                    let hash = index.structural_hash();
                    seen.insert(hash);
                    if population.contains(hash) {
                        (Outcome::Duplicate, None)
                    } else {
                        let fitness = evaluator.evaluate_hashed(&index, hash)?;
                        let f = fitness.median_ns;
                        let outcome = if f > t.threshold {
                            Outcome::Rejected
                        } else if admit(&mut population, &t, Member { index, hash, fitness, born: generation }) {
                            Outcome::Admitted
                        } else {
                            Outcome::Protected
                        };
                        (outcome, Some(f))
                    }
                }
            };
            match outcome {
                Outcome::Admitted => stats.admitted += 1,
                Outcome::Rejected => stats.rejected += 1,
                Outcome::Duplicate => stats.duplicates += 1,
                Outcome::Aborted => stats.aborted += 1,
                Outcome::Protected => stats.protected += 1,
            }
            let row = TraceRow {
                generation,
                best_fitness_ns: population.best().map_or(u64::MAX, |b| b.fitness.median_ns),
                population_size: population.len(),
                mutation_kind: kind,
                admitted: outcome == Outcome::Admitted,
                outcome,
                mutant_fitness_ns: mutant_fitness,
            };
            on_row(&row);
            trace.push(row);
        }
    }

    stats.measurements = evaluator.measurements() - base_measurements;
    stats.cache_hits = evaluator.cache_hits() - base_hits;
    stats.distinct_hashes = seen.len() as u64;
    let best = population.best().ok_or(GeneticError::EmptyPopulation)?.clone();
    Ok(SearchOutcome { best, initial_best, population, trace, stats })
}

/// Inserts an admissible mutant, evicting when the population is full.
///
/// The victim is the least fit sampled member still present, else the least
/// fit member overall. A victim that is the global best is replaced by the
/// next least fit member unless the mutant is at least as fit; if no other
/// member exists the mutant is turned away.
fn admit(population: &mut Population, t: &Tournament, mutant: Member) -> bool {
    if population.len() < population.capacity() {
        return population.push(mutant);
    }
    let m = population.members();
    let best_pos = (0..m.len())
        .reduce(|a, b| if m[b].fitness.median_ns < m[a].fitness.median_ns { b } else { a })
        .expect("full population is non-empty");
    let sampled_worst = t
        .sample
        .iter()
        .filter_map(|&h| population.position(h))
        .reduce(|a, b| if m[b].fitness.median_ns > m[a].fitness.median_ns { b } else { a });
    let mut victim = sampled_worst.or_else(|| population.worst_position(None)).expect("non-empty");
    if victim == best_pos && mutant.fitness.median_ns > m[best_pos].fitness.median_ns {
        match population.worst_position(Some(best_pos)) {
            Some(other) => victim = other,
            None => return false,
        }
    }
    population.members.swap_remove(victim);
    population.push(mutant)
}
