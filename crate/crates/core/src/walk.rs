//! Query-conditioned non-backtracking random walks.
//!
//! From node `cur`, having arrived from `prev`, the next node is uniform
//! over the distinct neighbours of `cur` other than `prev` (or `prev`
//! itself when it is the only neighbour), and the edge used is uniform over
//! all edges joining the two nodes in either direction.
//!
//! A batch holds `n` walks per start scenario, grouped by scenario in the
//! order of [`Scenario::for_query`].

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{contract, FlockError, Result};
use crate::kg::{Direction, KnowledgeGraph, Query, Triple};
use crate::rng::{walk_rng, FlockRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub rel: usize,
    pub dir: Direction,
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Walk {
    pub start: usize,
    pub steps: Vec<Step>,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Node at position `s` (0 is the start).
    pub fn node(&self, s: usize) -> usize {
        if s == 0 {
            self.start
        } else {
            self.steps[s - 1].node
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.start).chain(self.steps.iter().map(|s| s.node))
    }

    /// The stored triple traversed by step `s` (1-based).
    pub fn triple(&self, s: usize) -> Triple {
        let st = self.steps[s - 1];
        let from = self.node(s - 1);
        match st.dir {
            Direction::Forward => Triple::new(from, st.rel, st.node),
            Direction::Inverse => Triple::new(st.node, st.rel, from),
        }
    }

    /// Relabels nodes and relations.
    pub fn map(&self, node_map: &[usize], rel_map: &[usize]) -> Walk {
        Walk {
            start: node_map[self.start],
            steps: self
                .steps
                .iter()
                .map(|s| Step {
                    rel: rel_map[s.rel],
                    dir: s.dir,
                    node: node_map[s.node],
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    QueryHead,
    QueryRelation,
    Random,
    QueryTail,
}

impl Scenario {
    /// Scenarios used for a query, in batch order.
    pub fn for_query(q: &Query) -> &'static [Scenario] {
        if q.is_relation() {
            &[
                Scenario::QueryHead,
                Scenario::QueryRelation,
                Scenario::Random,
                Scenario::QueryTail,
            ]
        } else {
            &[Scenario::QueryHead, Scenario::QueryRelation, Scenario::Random]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkBatch {
    pub walks: Vec<Walk>,
    pub scenarios: Vec<Scenario>,
}

/// A graph as seen by the walker, optionally with every edge between one
/// pair of nodes hidden (used to remove the edges of a training query).
#[derive(Clone, Copy, Debug)]
pub struct GraphView<'g> {
    pub graph: &'g KnowledgeGraph,
    hidden: Option<(usize, usize)>,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        Self { graph, hidden: None }
    }

    /// Hides all edges joining `a` and `b`, in both directions and for every
    /// relation.
    pub fn without_edges_between(graph: &'g KnowledgeGraph, a: usize, b: usize) -> Self {
        Self {
            graph,
            hidden: Some((a, b)),
        }
    }

    pub fn hidden_pair(&self) -> Option<(usize, usize)> {
        self.hidden
    }

    fn is_hidden(&self, v: usize, w: usize) -> bool {
        matches!(self.hidden, Some((a, b)) if (a == v && b == w) || (a == w && b == v))
    }

    pub fn triple_visible(&self, t: &Triple) -> bool {
        !self.is_hidden(t.head, t.tail)
    }

    /// Indices (into the neighbour list of `v`) of visible neighbours.
    fn visible(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.graph.degree(v)).filter(move |&k| !self.is_hidden(v, self.graph.neighbor_at(v, k)))
    }

    pub fn visible_degree(&self, v: usize) -> usize {
        self.visible(v).count()
    }

    /// Visible neighbours of `cur` the walk may move to after `prev`.
    fn candidates(&self, prev: Option<usize>, cur: usize) -> Result<Vec<usize>> {
        let vis: Vec<usize> = self.visible(cur).collect();
        if vis.is_empty() {
            return Err(FlockError::DeadEnd(cur));
        }
        let Some(p) = prev else { return Ok(vis) };
        let rest: Vec<usize> = vis
            .iter()
            .copied()
            .filter(|&k| self.graph.neighbor_at(cur, k) != p)
            .collect();
        Ok(if rest.is_empty() { vis } else { rest })
    }

    pub fn sample_step(&self, prev: Option<usize>, cur: usize, rng: &mut FlockRng) -> Result<Step> {
        let cands = self.candidates(prev, cur)?;
        let k = cands[rng.gen_range(0..cands.len())];
        let edges = self.graph.edges_to_neighbor(cur, k);
        let e = edges[rng.gen_range(0..edges.len())];
        Ok(Step {
            rel: e.rel,
            dir: e.dir,
            node: e.node,
        })
    }

    /// Exact law of [`Self::sample_step`].
    pub fn step_distribution(&self, prev: Option<usize>, cur: usize) -> Result<Vec<(Step, BigRational)>> {
        let cands = self.candidates(prev, cur)?;
        let mut out = Vec::new();
        for &k in &cands {
            let edges = self.graph.edges_to_neighbor(cur, k);
            let p = ratio(1, cands.len() * edges.len());
            for e in edges {
                out.push((
                    Step {
                        rel: e.rel,
                        dir: e.dir,
                        node: e.node,
                    },
                    p.clone(),
                ));
            }
        }
        Ok(out)
    }

    fn non_isolated(&self) -> Vec<usize> {
        (0..self.graph.num_entities())
            .filter(|&v| self.visible(v).next().is_some())
            .collect()
    }

    fn visible_edges_of(&self, rel: usize) -> Vec<usize> {
        self.graph
            .edges_of_relation(rel)
            .iter()
            .copied()
            .filter(|&i| self.triple_visible(&self.graph.triples()[i]))
            .collect()
    }

    fn relations_with_edges(&self) -> Vec<usize> {
        (0..self.graph.num_relations())
            .filter(|&r| !self.visible_edges_of(r).is_empty())
            .collect()
    }

    /// Resolves which concrete start rule applies, applying the fallback to
    /// a random start when the requested one is impossible.
    fn effective_start(&self, q: &Query, scenario: Scenario) -> Result<Start> {
        let start = match scenario {
            Scenario::QueryHead => Start::Fixed(q.head()),
            Scenario::QueryTail => Start::Fixed(
                q.tail()
                    .ok_or_else(|| contract("query-tail scenario needs a relation query"))?,
            ),
            Scenario::QueryRelation => match *q {
                Query::Entity { rel, inverse, .. } => Start::Edge { rel, inverse },
                Query::Relation { .. } => Start::AnyRelation,
            },
            Scenario::Random => Start::Random,
        };
        let possible = match start {
            Start::Fixed(v) => v < self.graph.num_entities() && self.visible(v).next().is_some(),
            Start::Edge { rel, .. } => rel < self.graph.num_relations() && !self.visible_edges_of(rel).is_empty(),
            Start::AnyRelation => !self.relations_with_edges().is_empty(),
            Start::Random => true,
        };
        if possible {
            return Ok(start);
        }
        log::debug!("{scenario:?} start impossible for {q:?}; using a random start");
        Ok(Start::Random)
    }

    /// Start node and first step for one walk.
    pub fn sample_start(&self, q: &Query, scenario: Scenario, rng: &mut FlockRng) -> Result<(usize, Step)> {
        match self.effective_start(q, scenario)? {
            Start::Fixed(v) => Ok((v, self.sample_step(None, v, rng)?)),
            Start::Edge { rel, inverse } => {
                let edges = self.visible_edges_of(rel);
                Ok(self.edge_start(edges[rng.gen_range(0..edges.len())], inverse))
            }
            Start::AnyRelation => {
                let rels = self.relations_with_edges();
                let rel = rels[rng.gen_range(0..rels.len())];
                let edges = self.visible_edges_of(rel);
                Ok(self.edge_start(edges[rng.gen_range(0..edges.len())], false))
            }
            Start::Random => {
                let nodes = self.non_isolated();
                if nodes.is_empty() {
                    return Err(FlockError::EmptyGraph("no traversable edges".into()));
                }
                let v = nodes[rng.gen_range(0..nodes.len())];
                Ok((v, self.sample_step(None, v, rng)?))
            }
        }
    }

    fn edge_start(&self, triple_index: usize, inverse: bool) -> (usize, Step) {
        let t = self.graph.triples()[triple_index];
        if inverse {
            (
                t.tail,
                Step {
                    rel: t.rel,
                    dir: Direction::Inverse,
                    node: t.head,
                },
            )
        } else {
            (
                t.head,
                Step {
                    rel: t.rel,
                    dir: Direction::Forward,
                    node: t.tail,
                },
            )
        }
    }

    /// Exact law of [`Self::sample_start`].
    pub fn start_distribution(&self, q: &Query, scenario: Scenario) -> Result<Vec<(usize, Step, BigRational)>> {
        let mut out = Vec::new();
        match self.effective_start(q, scenario)? {
            Start::Fixed(v) => {
                for (s, p) in self.step_distribution(None, v)? {
                    out.push((v, s, p));
                }
            }
            Start::Edge { rel, inverse } => {
                let edges = self.visible_edges_of(rel);
                for &e in &edges {
                    let (v, s) = self.edge_start(e, inverse);
                    out.push((v, s, ratio(1, edges.len())));
                }
            }
            Start::AnyRelation => {
                let rels = self.relations_with_edges();
                for &rel in &rels {
                    let edges = self.visible_edges_of(rel);
                    for &e in &edges {
                        let (v, s) = self.edge_start(e, false);
                        out.push((v, s, ratio(1, rels.len() * edges.len())));
                    }
                }
            }
            Start::Random => {
                let nodes = self.non_isolated();
                if nodes.is_empty() {
                    return Err(FlockError::EmptyGraph("no traversable edges".into()));
                }
                for &v in &nodes {
                    for (s, p) in self.step_distribution(None, v)? {
                        out.push((v, s, p * ratio(1, nodes.len())));
                    }
                }
            }
        }
        Ok(out)
    }

    /// One walk of `length` steps.
    pub fn sample_walk(&self, q: &Query, scenario: Scenario, length: usize, rng: &mut FlockRng) -> Result<Walk> {
        if length == 0 {
            return Err(contract("walk length must be at least 1"));
        }
        let (start, first) = self.sample_start(q, scenario, rng)?;
        let mut steps = Vec::with_capacity(length);
        steps.push(first);
        let (mut prev, mut cur) = (start, first.node);
        for _ in 1..length {
            let s = self.sample_step(Some(prev), cur, rng)?;
            steps.push(s);
            prev = cur;
            cur = s.node;
        }
        Ok(Walk { start, steps })
    }

    /// A walk from a uniformly random non-isolated node, ignoring any query.
    pub fn sample_free_walk(&self, length: usize, rng: &mut FlockRng) -> Result<Walk> {
        let dummy = Query::Relation { head: 0, tail: 0 };
        self.sample_walk(&dummy, Scenario::Random, length, rng)
    }

    /// `n` walks per scenario. Walk `i` of the batch uses substream `i` of
    /// `seed`, so the batch is a pure function of its arguments.
    pub fn sample_walk_batch(&self, q: &Query, n: usize, length: usize, seed: u64) -> Result<WalkBatch> {
        if n == 0 {
            return Err(contract("base walk count must be at least 1"));
        }
        let scenarios = Scenario::for_query(q);
        let mut walks = Vec::with_capacity(n * scenarios.len());
        let mut tags = Vec::with_capacity(n * scenarios.len());
        for (si, &sc) in scenarios.iter().enumerate() {
            for j in 0..n {
                let mut rng = walk_rng(seed, (si * n + j) as u64);
                walks.push(self.sample_walk(q, sc, length, &mut rng)?);
                tags.push(sc);
            }
        }
        Ok(WalkBatch { walks, scenarios: tags })
    }

    /// Every walk of `length` steps a scenario can produce, with its exact
    /// probability. Fails once more than `budget` walks are reachable.
    pub fn enumerate_walk_distribution(
        &self,
        q: &Query,
        scenario: Scenario,
        length: usize,
        budget: usize,
    ) -> Result<BTreeMap<Walk, BigRational>> {
        if length == 0 {
            return Err(contract("walk length must be at least 1"));
        }
        let mut frontier: Vec<(Walk, BigRational)> = self
            .start_distribution(q, scenario)?
            .into_iter()
            .map(|(v, s, p)| {
                (
                    Walk {
                        start: v,
                        steps: vec![s],
                    },
                    p,
                )
            })
            .collect();
        for _ in 1..length {
            let mut next = Vec::new();
            for (w, p) in frontier {
                let cur = w.node(w.len());
                let prev = w.node(w.len() - 1);
                for (s, q) in self.step_distribution(Some(prev), cur)? {
                    let mut ext = w.clone();
                    ext.steps.push(s);
                    next.push((ext, &p * q));
                }
                if next.len() > budget {
                    return Err(FlockError::Budget(format!(
                        "more than {budget} walks of length {length}"
                    )));
                }
            }
            frontier = next;
        }
        if frontier.len() > budget {
            return Err(FlockError::Budget(format!(
                "more than {budget} walks of length {length}"
            )));
        }
        let mut out: BTreeMap<Walk, BigRational> = BTreeMap::new();
        for (w, p) in frontier {
            *out.entry(w).or_insert_with(BigRational::zero) += p;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
enum Start {
    Fixed(usize),
    Edge { rel: usize, inverse: bool },
    AnyRelation,
    Random,
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn total_probability(dist: &BTreeMap<Walk, BigRational>) -> BigRational {
    dist.values().fold(BigRational::zero(), |a, b| a + b)
}

pub fn is_exactly_one(p: &BigRational) -> bool {
    p.is_one()
}

/// Inputs to [`adapt_walk_count`].
#[derive(Clone, Copy, Debug)]
pub struct WalkCountPolicy {
    pub n_train: usize,
    pub v_train_mean: f64,
    pub e_train_mean: f64,
    pub clamp_min: usize,
    pub clamp_max: usize,
}

impl WalkCountPolicy {
    pub fn new(n_train: usize, v_train_mean: f64, e_train_mean: f64) -> Self {
        Self {
            n_train,
            v_train_mean,
            e_train_mean,
            clamp_min: 16,
            clamp_max: 512,
        }
    }
}

/// Power of two closest to `x` on the linear scale; exact midpoints go up.
pub fn nearest_power_of_two(x: f64) -> usize {
    if x <= 1.0 {
        return 1;
    }
    let lo = 1usize << (x.log2().floor() as u32);
    let hi = lo * 2;
    if x - (lo as f64) < (hi as f64) - x {
        lo
    } else {
        hi
    }
}

/// Scales the training walk count by the harmonic mean of the node and
/// edge ratios between a test graph and the training graphs.
pub fn adapt_walk_count(policy: &WalkCountPolicy, num_nodes: usize, num_edges: usize) -> Result<usize> {
    let p = policy;
    if p.v_train_mean <= 0.0 || p.e_train_mean <= 0.0 || num_nodes == 0 || num_edges == 0 || p.n_train == 0 {
        return Err(contract("walk-count adaptation needs positive counts"));
    }
    if !p.clamp_min.is_power_of_two() || !p.clamp_max.is_power_of_two() || p.clamp_min > p.clamp_max {
        return Err(contract(format!(
            "clamp interval [{}, {}] must be ordered powers of two",
            p.clamp_min, p.clamp_max
        )));
    }
    let a = num_nodes as f64 / p.v_train_mean;
    let b = num_edges as f64 / p.e_train_mean;
    Ok(adapt_from_ratios(p, a, b))
}

/// [`adapt_walk_count`] on precomputed ratios.
pub fn adapt_from_ratios(policy: &WalkCountPolicy, a: f64, b: f64) -> usize {
    let hm = 2.0 * a * b / (a + b);
    let raw = policy.n_train as f64 * hm;
    nearest_power_of_two(raw).clamp(policy.clamp_min, policy.clamp_max)
}

/// Outcome of the edge-cover probe for one walk length.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverPoint {
    pub length: usize,
    pub cover_fraction: f64,
    /// Mean first step at which all edges were seen, over covering walks.
    pub mean_steps_to_cover: f64,
}

/// Samples `samples` free walks of the longest length and scores each
/// prefix, so longer lengths see strictly more of the same walks.
pub fn cover_probe(view: &GraphView<'_>, lengths: &[usize], samples: usize, seed: u64) -> Result<Vec<CoverPoint>> {
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut distinct: Vec<Triple> = view
        .graph
        .triples()
        .iter()
        .copied()
        .filter(|t| view.triple_visible(t))
        .collect();
    distinct.sort();
    distinct.dedup();
    let index: std::collections::HashMap<Triple, usize> = distinct.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut cover_step: Vec<Option<usize>> = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = walk_rng(seed, i as u64);
        let w = view.sample_free_walk(max_len, &mut rng)?;
        let mut seen = vec![false; distinct.len()];
        let mut remaining = distinct.len();
        let mut at = None;
        for s in 1..=w.len() {
            let k = index[&w.triple(s)];
            if !seen[k] {
                seen[k] = true;
                remaining -= 1;
                if remaining == 0 {
                    at = Some(s);
                    break;
                }
            }
        }
        cover_step.push(at);
    }
    Ok(lengths
        .iter()
        .map(|&l| {
            let hits: Vec<usize> = cover_step.iter().flatten().copied().filter(|&s| s <= l).collect();
            CoverPoint {
                length: l,
                cover_fraction: hits.len() as f64 / samples.max(1) as f64,
                mean_steps_to_cover: if hits.is_empty() {
                    f64::NAN
                } else {
                    hits.iter().sum::<usize>() as f64 / hits.len() as f64
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;
    use crate::rng::rng_for;

    fn g(n: usize, r: usize, t: &[(usize, usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(n, r, t.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect()).unwrap()
    }

    fn p(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn excludes_previous_node() {
        // w = 0 with neighbours u = 1, x = 2, y = 3.
        let kg = g(4, 1, &[(0, 0, 1), (0, 0, 2), (3, 0, 0)]);
        let view = GraphView::new(&kg);
        let dist = view.step_distribution(Some(1), 0).unwrap();
        let nodes: Vec<_> = dist.iter().map(|(s, p)| (s.node, p.clone())).collect();
        assert_eq!(nodes, vec![(2, p(1, 2)), (3, p(1, 2))]);
    }

    #[test]
    fn forced_return_at_leaf() {
        let kg = g(2, 1, &[(0, 0, 1)]);
        let view = GraphView::new(&kg);
        let dist = view.step_distribution(Some(0), 1).unwrap();
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].0.node, 0);
        assert!(dist[0].1.is_one());
    }

    #[test]
    fn parallel_edges_split_evenly() {
        let kg = g(2, 2, &[(0, 0, 1), (1, 1, 0)]);
        let view = GraphView::new(&kg);
        let dist = view.step_distribution(None, 0).unwrap();
        assert_eq!(dist.len(), 2);
        assert!(dist.iter().all(|(_, q)| *q == p(1, 2)));
        assert_eq!(dist[1].0.dir, Direction::Inverse);
    }

    #[test]
    fn isolated_node_is_a_dead_end() {
        let kg = g(3, 1, &[(0, 0, 1)]);
        let view = GraphView::new(&kg);
        let mut rng = rng_for(0, &[]);
        assert!(matches!(
            view.sample_step(None, 2, &mut rng),
            Err(FlockError::DeadEnd(2))
        ));
    }

    #[test]
    fn query_relation_single_edge() {
        let kg = g(3, 2, &[(0, 0, 1), (1, 1, 2)]);
        let view = GraphView::new(&kg);
        let starts = view
            .start_distribution(&Query::entity(2, 1), Scenario::QueryRelation)
            .unwrap();
        assert_eq!(starts.len(), 1);
        assert_eq!(starts[0].0, 1);
        assert_eq!(starts[0].1.node, 2);
    }

    #[test]
    fn random_start_is_uniform() {
        let kg = g(4, 1, &[(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 0)]);
        let view = GraphView::new(&kg);
        let starts = view.start_distribution(&Query::entity(0, 0), Scenario::Random).unwrap();
        for v in 0..4 {
            let mass = starts
                .iter()
                .filter(|(s, _, _)| *s == v)
                .fold(BigRational::zero(), |a, (_, _, q)| a + q);
            assert_eq!(mass, p(1, 4));
        }
    }

    #[test]
    fn missing_relation_falls_back_to_random() {
        let kg = g(3, 2, &[(0, 0, 1), (1, 0, 2)]);
        let view = GraphView::new(&kg);
        let a = view
            .start_distribution(&Query::entity(0, 1), Scenario::QueryRelation)
            .unwrap();
        let b = view.start_distribution(&Query::entity(0, 1), Scenario::Random).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_node_walk_is_certain() {
        let kg = g(2, 1, &[(0, 0, 1)]);
        let view = GraphView::new(&kg);
        let d = view
            .enumerate_walk_distribution(&Query::entity(0, 0), Scenario::QueryHead, 1, 100)
            .unwrap();
        assert_eq!(d.len(), 1);
        assert!(total_probability(&d).is_one());
    }

    #[test]
    fn triangle_two_steps() {
        let kg = g(3, 1, &[(0, 0, 1), (1, 0, 2), (2, 0, 0)]);
        let view = GraphView::new(&kg);
        let d = view
            .enumerate_walk_distribution(&Query::entity(0, 0), Scenario::QueryHead, 2, 100)
            .unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.values().all(|q| *q == p(1, 2)));
        // No walk returns to its start at step 2.
        assert!(d.keys().all(|w| w.node(2) != 0));
    }

    #[test]
    fn hiding_edges_is_a_view() {
        let kg = g(3, 1, &[(0, 0, 1), (1, 0, 2)]);
        let masked = GraphView::without_edges_between(&kg, 1, 0);
        assert_eq!(masked.visible_degree(0), 0);
        assert_eq!(masked.visible_degree(1), 1);
        assert_eq!(GraphView::new(&kg).visible_degree(0), 1);
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let kg = g(4, 2, &[(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 0)]);
        let view = GraphView::new(&kg);
        let b = view.sample_walk_batch(&Query::entity(0, 0), 1, 5, 3).unwrap();
        assert_eq!(b.walks.len(), 3);
        let b = view
            .sample_walk_batch(&Query::Relation { head: 0, tail: 2 }, 2, 5, 3)
            .unwrap();
        assert_eq!(b.walks.len(), 8);
        assert_eq!(b.scenarios[6], Scenario::QueryTail);
        assert_eq!(
            b,
            view.sample_walk_batch(&Query::Relation { head: 0, tail: 2 }, 2, 5, 3)
                .unwrap()
        );
    }

    #[test]
    fn walk_count_examples() {
        let pol = WalkCountPolicy::new(128, 1.0, 1.0);
        assert_eq!(adapt_from_ratios(&pol, 1.0, 1.0), 128);
        assert_eq!(adapt_from_ratios(&pol, 1.0, 1.0 / 3.0), 64);
        assert_eq!(adapt_from_ratios(&pol, 0.2193, 0.0597), 16);
        assert_eq!(
            adapt_walk_count(&WalkCountPolicy::new(128, 100.0, 300.0), 100, 100).unwrap(),
            64
        );
        assert!(adapt_walk_count(&WalkCountPolicy::new(128, 0.0, 1.0), 1, 1).is_err());
    }

    #[test]
    fn nearest_power_ties_go_up() {
        assert_eq!(nearest_power_of_two(12.0), 16);
        assert_eq!(nearest_power_of_two(11.99), 8);
        assert_eq!(nearest_power_of_two(96.0), 128);
        assert_eq!(nearest_power_of_two(64.0), 64);
    }
}
