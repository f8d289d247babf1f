use evidx_core::builder::{build_from_config, build_single_node, bulkload, BulkloadSpec, PhysicalChoice};
use evidx_core::config::IndexConfig;
use evidx_core::genetic::{genetic_search, CostWeights, Evaluator, FitnessMode, GeneticParams, TournamentSize};
use evidx_core::layout::{compatible, valid_pairs, DataLayout};
use evidx_core::model::PartitioningFunction;
use evidx_core::mutation::{self, Distributions, MutationKind};
use evidx_core::physical::{PhysicalIndex, RangeOracle};
use evidx_core::search::{fit_linreg, lower_bound, scan_lower_bound, NoProbe, SearchMethod};
use evidx_core::workload::{gen_uni_dense, Dataset, Domain, Query, QueryMode, Workload, WorkloadSpec};
use evidx_core::Key;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sorted_keys(max_len: usize) -> impl Strategy<Value = Vec<Key>> {
    prop_oneof![
        prop::collection::btree_set(0u64..10_000, 1..max_len),
        prop::collection::btree_set(any::<u64>(), 1..max_len),
        (1usize..max_len, 0u64..1000, 1u64..50).prop_map(|(n, start, step)| (0..n as u64).map(|i| start + i * step).collect()),
    ]
    .prop_map(|s| s.into_iter().collect())
}

fn random_index(keys: &[Key], seed: u64) -> PhysicalIndex {
    let n = keys.len();
    let leaves = (n / 8).clamp(1, 12);
    let spec = BulkloadSpec {
        leaf_count: leaves,
        leaf_fill: n.div_ceil(leaves),
        fanout: 3,
        physical: PhysicalChoice::Random { seed },
        capacity: 10_000,
    };
    bulkload(keys, &spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ordered_methods_agree_with_scan(keys in sorted_keys(300), probes in prop::collection::vec(any::<u64>(), 1..20)) {
        let fit = fit_linreg::<Key, _>(&keys[..]);
        let mut all_probes = probes;
        all_probes.extend(keys.iter().step_by(7).copied());
        all_probes.extend([0, u64::MAX]);
        for p in all_probes {
            let want = scan_lower_bound(&keys[..], p, &mut NoProbe);
            for m in SearchMethod::ORDERED {
                prop_assert_eq!(lower_bound(&keys[..], p, m, Some(&fit), &mut NoProbe), Some(want), "{:?} probe {}", m, p);
            }
        }
    }

    #[test]
    fn linreg_finds_every_stored_key(keys in sorted_keys(400)) {
        let fit = fit_linreg::<Key, _>(&keys[..]);
        for (i, &k) in keys.iter().enumerate() {
            prop_assert_eq!(lower_bound(&keys[..], k, SearchMethod::LinRegS, Some(&fit), &mut NoProbe), Some(i));
        }
    }

    #[test]
    fn partitioning_is_total_and_deterministic(key in any::<u64>(), width in 1u32..=64, start in 0u32..64,
                                               slope in -1.0f64..1.0, intercept in -100.0f64..100.0, bins in 1u64..1000,
                                               pivots in prop::collection::btree_set(any::<u64>(), 0..20)) {
        let functions = [
            PartitioningFunction::BitSuffix { width },
            PartitioningFunction::BitPrefix { start: start.min(64 - width), width },
            PartitioningFunction::LinearModel { slope, intercept, bins },
            PartitioningFunction::pivots(pivots.iter().copied().collect()),
        ];
        for f in functions {
            prop_assert!(f.validate().is_ok());
            let v = f.apply(key);
            prop_assert_eq!(v, f.apply(key));
            match &f {
                PartitioningFunction::BitSuffix { width } | PartitioningFunction::BitPrefix { width, .. } if *width < 64 => {
                    prop_assert!(v < 1u64 << width)
                }
                PartitioningFunction::LinearModel { bins, .. } => prop_assert!(v < *bins),
                PartitioningFunction::RangePivots { pivots } => prop_assert!(v <= pivots.len() as u64),
                _ => {}
            }
        }
    }

    #[test]
    fn point_lookups_match_oracle(keys in sorted_keys(200), seed in any::<u64>(), probes in prop::collection::vec(any::<u64>(), 0..30)) {
        let index = random_index(&keys, seed);
        let oracle = RangeOracle::new(&keys);
        for p in probes.into_iter().chain(keys.iter().copied()) {
            prop_assert_eq!(index.execute_point(p), oracle.point(p));
            prop_assert_eq!(index.execute_lower_bound(p, &mut NoProbe), oracle.lower_bound(p));
        }
    }

    #[test]
    fn config_round_trip_and_identity_rebuild(keys in sorted_keys(200), seed in any::<u64>()) {
        let index = random_index(&keys, seed);
        let cfg = index.to_config();
        let back = IndexConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        let rebuilt = build_from_config(&back, &keys).unwrap();
        prop_assert_eq!(rebuilt.structural_hash(), index.structural_hash());
        prop_assert_eq!(rebuilt.entries(), index.entries());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mutations_preserve_results_and_inputs(keys in sorted_keys(120), seed in any::<u64>(), draws in 1usize..12) {
        let dists = Distributions { include_row_layout: true, ..Default::default() };
        let oracle = RangeOracle::new(&keys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index = random_index(&keys, seed);
        for _ in 0..draws {
            let before = index.structural_hash();
            if let Ok(m) = dists.draw(&index, &mut rng) {
                if let Ok(next) = mutation::apply(&index, &m) {
                    prop_assert_eq!(index.structural_hash(), before, "input changed by {:?}", m);
                    prop_assert_eq!(oracle.grid_counterexample(&next), None, "{:?}", m);
                    index = next;
                }
            }
        }
    }

    #[test]
    fn physical_draws_are_always_compatible(keys in sorted_keys(80), seed in any::<u64>(), with_row in any::<bool>()) {
        let dists = Distributions { include_row_layout: with_row, ..Default::default() };
        let index = random_index(&keys, seed);
        for r in index.nodes() {
            for kind in MutationKind::ALL {
                for ((layout, search), w) in dists.pair_support(kind, r.node) {
                    prop_assert!(w > 0.0);
                    prop_assert!(compatible(layout, search));
                    prop_assert!(r.node.is_leaf() || kind == MutationKind::SplitVertical || layout != DataLayout::Hash);
                }
            }
        }
    }

    #[test]
    fn workload_invariants(n in 10usize..3000, seed in any::<u64>(), sel in 0.0f64..0.2, lo in 0.0f64..0.5, count in 1usize..200) {
        let d = gen_uni_dense(n).unwrap();
        let point = WorkloadSpec::Point { domain: Domain { lo, hi: 1.0 }, count };
        let q = point.generate(&d, seed).unwrap();
        prop_assert_eq!(&q, &point.generate(&d, seed).unwrap());
        for x in &q {
            let Query::Point { key } = x else { unreachable!() };
            prop_assert!(d.keys().binary_search(key).is_ok());
        }
        let range = WorkloadSpec::Range { sel, domain: Domain::FULL, count };
        if let Ok(q) = range.generate(&d, seed) {
            let span = ((n as f64 * sel).round() as usize).max(1);
            let oracle = RangeOracle::new(d.keys());
            for x in q {
                let Query::Range { l, h } = x else { unreachable!() };
                prop_assert!(l <= h && h <= *d.keys().last().unwrap());
                prop_assert_eq!(oracle.summary(l, h).count as usize, span);
            }
        }
    }

    #[test]
    fn population_never_exceeds_capacity(seed in any::<u64>(), s_pi in 2usize..8, q in 0.0f64..=100.0) {
        let d = gen_uni_dense(400).unwrap();
        let w = Workload::generate(&d, &WorkloadSpec::Point { domain: Domain::FULL, count: 50 }, QueryMode::Materialize, seed).unwrap();
        let mut ev = Evaluator::new(w, FitnessMode::CostModel { weights: CostWeights::default() }, 1, 0);
        let params = GeneticParams {
            generations: 8,
            s_init: s_pi.min(3),
            s_max: 4,
            s_pi,
            s_t: TournamentSize::Absolute(s_pi.div_ceil(2)),
            q,
            c: 1,
            master_seed: seed,
            initial_leaves: 8,
            initial_fanout: 3,
            ..Default::default()
        };
        let out = genetic_search(&params, d.keys(), &Distributions::default(), &mut ev, |_| {}).unwrap();
        prop_assert!(out.trace.iter().all(|r| r.population_size <= s_pi));
        prop_assert!(out.trace.windows(2).all(|w| w[1].best_fitness_ns <= w[0].best_fitness_ns));
        prop_assert!(out.stats.measurements <= out.stats.distinct_hashes);
        let hashes: std::collections::HashSet<u64> = out.population.members().iter().map(|m| m.hash).collect();
        prop_assert_eq!(hashes.len(), out.population.len());
    }
}

#[test]
fn pair_space_is_exhaustively_compatible() {
    for routing in [false, true] {
        for with_row in [false, true] {
            for (l, s) in valid_pairs(routing, with_row) {
                assert!(compatible(l, s));
                assert!(!(routing && l == DataLayout::Hash));
            }
        }
    }
}

#[test]
fn single_nodes_answer_every_query() {
    let d = Dataset::new("odd", (0..500u64).map(|k| k * k).collect()).unwrap();
    let oracle = RangeOracle::new(d.keys());
    for (l, s) in valid_pairs(false, true) {
        let idx = build_single_node(d.keys(), l, s, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(oracle.sampled_counterexample(&idx, 5000, &mut rng), None, "{l:?}/{s:?}");
    }
}
