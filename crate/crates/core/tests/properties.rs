use std::path::Path;

use flock::config::RunConfig;
use flock::eval::{filtered_rank, random_reciprocal_rank, MetricReport};
use flock::kg::{apply_isomorphism, parse_triples, Isomorphism, KnowledgeGraph, LoadOptions, Query, Triple, Vocab};
use flock::record::record;
use flock::rng::walk_rng;
use flock::train::adversarial_weights;
use flock::verify::random_isomorphism;
use flock::walk::{adapt_walk_count, nearest_power_of_two, GraphView, Scenario, WalkCountPolicy};
use num_traits::One;
use proptest::prelude::*;

/// A random graph where every node has at least one edge.
fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = KnowledgeGraph> {
    (2..=max_nodes, 1usize..=3).prop_flat_map(|(n, nr)| {
        let extra = prop::collection::vec((0..n, 0..nr, 0..n), 0..2 * n);
        let spine = prop::collection::vec((0..n, 0..nr), n - 1);
        (Just(n), Just(nr), spine, extra).prop_map(|(n, nr, spine, extra)| {
            let mut t: Vec<Triple> = spine
                .into_iter()
                .enumerate()
                .map(|(i, (h, r))| Triple::new(h % (i + 1), r, i + 1))
                .collect();
            t.extend(extra.into_iter().map(|(h, r, tl)| Triple::new(h, r, tl)));
            KnowledgeGraph::from_triples(n, nr, t).unwrap()
        })
    })
}

fn perm_strategy(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn graph_and_iso(max_nodes: usize) -> impl Strategy<Value = (KnowledgeGraph, Isomorphism)> {
    graph_strategy(max_nodes).prop_flat_map(|g| {
        let (n, nr) = (g.num_entities(), g.num_relations());
        (Just(g), perm_strategy(n), perm_strategy(nr))
            .prop_map(|(g, nodes, rels)| (g, Isomorphism::new(nodes, rels).unwrap()))
    })
}

fn query_of(g: &KnowledgeGraph, pick: usize, kind: u8) -> Query {
    let t = g.triples()[pick % g.num_triples()];
    match kind % 3 {
        0 => Query::entity(t.head, t.rel),
        1 => Query::Entity {
            head: t.tail,
            rel: t.rel,
            inverse: true,
        },
        _ => Query::Relation {
            head: t.head,
            tail: t.tail,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tsv_round_trip(g in graph_strategy(8)) {
        let mut vocab = Vocab::default();
        let opts = LoadOptions { dedup: false };
        let back = parse_triples(&g.to_tsv(), Path::new("mem"), &mut vocab, opts).unwrap();
        let named = |ts: &[Triple], en: &dyn Fn(usize) -> String, rn: &dyn Fn(usize) -> String| {
            let mut v: Vec<(String, String, String)> = ts.iter().map(|t| (en(t.head), rn(t.rel), en(t.tail))).collect();
            v.sort();
            v
        };
        let a = named(g.triples(), &|i| g.entity_name(i).to_string(), &|r| g.relation_name(r).to_string());
        let b = named(&back, &|i| vocab.entities[i].clone(), &|r| vocab.relations[r].clone());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn isomorphism_round_trip((g, mu) in graph_and_iso(8)) {
        let h = apply_isomorphism(&g, &mu).unwrap();
        prop_assert_eq!(h.num_triples(), g.num_triples());
        let mut dg: Vec<usize> = (0..g.num_entities()).map(|v| g.degree(v)).collect();
        let mut dh: Vec<usize> = (0..h.num_entities()).map(|v| h.degree(v)).collect();
        dg.sort();
        dh.sort();
        prop_assert_eq!(dg, dh);
        for v in 0..g.num_entities() {
            prop_assert_eq!(g.degree(v), h.degree(mu.node_map[v]));
        }
        let back = apply_isomorphism(&h, &mu.inverse()).unwrap();
        prop_assert_eq!(back.sorted_triples(), g.sorted_triples());
    }

    #[test]
    fn sampled_walks_are_valid_and_non_backtracking(g in graph_strategy(8), pick in 0usize..100, kind in 0u8..3, seed in 0u64..1000, len in 1usize..12) {
        let q = query_of(&g, pick, kind);
        let view = GraphView::new(&g);
        for &sc in Scenario::for_query(&q) {
            let w = view.sample_walk(&q, sc, len, &mut walk_rng(seed, 0)).unwrap();
            prop_assert_eq!(w.len(), len);
            let again = view.sample_walk(&q, sc, len, &mut walk_rng(seed, 0)).unwrap();
            prop_assert_eq!(&w, &again);
            let mut triples = g.sorted_triples();
            triples.dedup();
            for s in 1..=len {
                prop_assert!(triples.binary_search(&w.triple(s)).is_ok());
            }
            let nodes: Vec<usize> = w.nodes().collect();
            for s in 1..len {
                if g.degree(nodes[s]) > 1 && g.neighbors(nodes[s]).any(|u| u != nodes[s - 1]) {
                    prop_assert_ne!(nodes[s + 1], nodes[s - 1]);
                }
            }
            if sc == Scenario::QueryHead {
                prop_assert_eq!(w.start, q.head());
            }
        }
    }

    #[test]
    fn records_are_invariant((g, mu) in graph_and_iso(8), pick in 0usize..100, kind in 0u8..3, seed in 0u64..1000, len in 1usize..10) {
        let q = query_of(&g, pick, kind);
        let view = GraphView::new(&g);
        let w = view.sample_walk(&q, Scenario::Random, len, &mut walk_rng(seed, 3)).unwrap();
        let wm = w.map(&mu.node_map, &mu.rel_map);
        prop_assert_eq!(record(&w, &q), record(&wm, &mu.apply_query(&q)));
    }

    #[test]
    fn walk_distributions_sum_to_one(g in graph_strategy(6), pick in 0usize..100, kind in 0u8..3, len in 1usize..4) {
        let q = query_of(&g, pick, kind);
        let view = GraphView::new(&g);
        for &sc in Scenario::for_query(&q) {
            let d = view.enumerate_walk_distribution(&q, sc, len, 100_000).unwrap();
            let total: num_rational::BigRational = d.values().sum();
            prop_assert!(total.is_one());
        }
    }

    #[test]
    fn filtered_rank_bounds(scores in prop::collection::vec(-3i32..3, 2..40), truth in 0usize..40, mask in prop::collection::vec(any::<bool>(), 40)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let truth = truth % scores.len();
        let filter: Vec<usize> = (0..scores.len()).filter(|&i| i != truth && mask[i]).collect();
        let filtered = filtered_rank(&scores, truth, &filter).unwrap();
        let raw = filtered_rank(&scores, truth, &[]).unwrap();
        prop_assert!(filtered <= raw);
        prop_assert!(filtered >= 1.0);
        prop_assert!(filtered <= (scores.len() - filter.len()) as f64);
        let flat = vec![0.5; scores.len()];
        let m = scores.len() - filter.len();
        prop_assert_eq!(filtered_rank(&flat, truth, &filter).unwrap(), (m as f64 + 1.0) / 2.0);
    }

    #[test]
    fn report_matches_definitions(ranks in prop::collection::vec((1u32..50, 50usize..60), 1..30)) {
        let pairs: Vec<(f64, usize)> = ranks.iter().map(|&(r, m)| (f64::from(r), m)).collect();
        let rep = MetricReport::from_ranks(&pairs);
        let n = pairs.len() as f64;
        let mrr = pairs.iter().map(|(r, _)| 1.0 / r).sum::<f64>() / n;
        prop_assert!((rep.mrr - mrr).abs() < 1e-12);
        prop_assert!(rep.hits[&1] <= rep.hits[&3] && rep.hits[&3] <= rep.hits[&10]);
        let random = pairs.iter().map(|&(_, m)| random_reciprocal_rank(m)).sum::<f64>() / n;
        prop_assert!((rep.random_mrr - random).abs() < 1e-12);
    }

    #[test]
    fn adversarial_weights_are_a_distribution(p in prop::collection::vec(1e-6f64..1.0, 1..20), alpha in 0.05f64..5.0) {
        let w = adversarial_weights(&p, alpha);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // The weights follow log(1 - p), so they fall as the score rises.
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] > p[j] {
                    prop_assert!(w[i] <= w[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn adapted_counts_are_clamped_powers_of_two(v in 1usize..100_000, e in 1usize..1_000_000, n_train in 1usize..1024) {
        let pol = WalkCountPolicy::new(n_train, 5_000.0, 50_000.0);
        let n = adapt_walk_count(&pol, v, e).unwrap();
        prop_assert!(n.is_power_of_two());
        prop_assert!((pol.clamp_min..=pol.clamp_max).contains(&n));
        prop_assert!(adapt_walk_count(&pol, v * 2, e * 2).unwrap() >= n);
    }

    #[test]
    fn nearest_power_is_nearest(x in 1.0f64..1e6) {
        let p = nearest_power_of_two(x);
        prop_assert!(p.is_power_of_two());
        let (lo, hi) = (p as f64 / 2.0, p as f64 * 2.0);
        prop_assert!((x - p as f64).abs() <= (x - hi).abs());
        prop_assert!((x - p as f64).abs() <= (x - lo).abs() || lo < 1.0);
    }

    #[test]
    fn config_text_round_trip(steps in 1usize..10_000, lr in 1e-6f64..1e-1, heads in 1usize..8, l in 1usize..256, seed in any::<u64>()) {
        let mut c = RunConfig::default();
        c.train.steps = steps;
        c.train.lr = lr;
        c.train.seed = seed;
        c.model.heads = heads;
        c.model.walk_length = l;
        let back = RunConfig::from_text(&c.to_text(), "prop").unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn random_isomorphism_is_uniform_on_four_nodes() {
    // 10^4 draws over the 24 permutations of a 4-node path.
    let (p, dev) = flock::verify::isomorphism_uniformity(0, 10_000).unwrap();
    assert!(p > 0.01, "chi-square p = {p}");
    assert!(dev <= 0.01, "max deviation {dev}");
    let g = KnowledgeGraph::from_triples(4, 1, vec![Triple::new(0, 0, 1)]).unwrap();
    let mu = random_isomorphism(&g, &mut flock::rng::rng_for(1, &[]));
    assert!(mu.validate_for(&g).is_ok());
}
