//! Flower-shaped diagnostic graphs.
//!
//! An instance has a stem `b_0 -r0-> b_1 -r0-> ... -> b_t` and `c` petals
//! attached at `b_0`. Petal `i` owns nodes `a_1 .. a_{2l+1}` and two
//! relations `(x_i, y_i)`: spokes `(b_0, x_i, a_1)`, `(b_0, y_i, a_2)`,
//! ladders `(a_{2j-1}, x_i, a_{2j+1})` and `(a_{2j}, x_i, a_{2j+2})`, and the
//! two last rungs meet at `a_{2l+1}`. The query is `(b_s, r0, ?)`; the true
//! target is `a_{2j-1}` and the false one `a_{2j}` of one petal.
//!
//! Relation-assignment schemes are chosen so that every petal can be mapped
//! onto every other by a graph automorphism. Consequently `x_i` and `y_i`
//! share an automorphism orbit, and once relations are identified up to
//! orbit, swapping the odd and even branch of a petal becomes a symmetry
//! that exchanges the two targets.
//!
//! Node ids: `b_k = k`, and `a_k` of petal `i` (0-based) is
//! `t + 1 + i (2l + 1) + k - 1`. Relation `r0` is 0; petal relations are
//! numbered from 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{contract, FlockError, Result};
use crate::kg::{apply_isomorphism, Direction, Isomorphism, KnowledgeGraph, LoadOptions, Query, Triple};
use crate::model::Flock;
use crate::rng::{derive, rng_for, tag};
use crate::train::{Example, ExampleSource};
use crate::walk::GraphView;

pub const NUM_SCHEMES: usize = 11;

/// A relation-assignment scheme: the pair `(x_i, y_i)` of every petal,
/// with petal relations numbered from 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheme {
    pub id: usize,
    pub name: &'static str,
    pub pairs: Vec<(usize, usize)>,
}

fn shifted(c: usize, step: usize) -> Vec<(usize, usize)> {
    (0..c).map(|i| (i + 1, (i + step) % c + 1)).collect()
}

/// The eleven shipped schemes.
///
/// 1-5 cyclic with 2..6 petals (`y_i = x_{i+1}`); 6, 7 and 11 skip-cyclic
/// (`y_i = x_{i+k}`); 8 reflection pairs; 9 all ordered pairs of three
/// relations; 10 a doubled two-cycle.
pub fn scheme(id: usize) -> Result<Scheme> {
    let (name, pairs) = match id {
        1..=5 => ("cyclic", shifted(id + 1, 1)),
        6 => ("skip-cyclic", shifted(5, 2)),
        7 => ("skip-cyclic", shifted(6, 2)),
        8 => ("reflection-pairs", vec![(1, 2), (2, 1), (3, 4), (4, 3)]),
        9 => ("ordered-pairs", vec![(1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)]),
        10 => ("doubled-cyclic", vec![(1, 2), (2, 1), (1, 2), (2, 1)]),
        11 => ("skip-cyclic", shifted(7, 3)),
        _ => return Err(FlockError::Config(format!("scheme id {id} not in 1..={NUM_SCHEMES}"))),
    };
    Ok(Scheme { id, name, pairs })
}

impl Scheme {
    pub fn petals(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_petal_relations(&self) -> usize {
        self.pairs.iter().map(|&(x, y)| x.max(y)).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PetalsParams {
    pub scheme: usize,
    pub petal_len: usize,
    pub stem_len: usize,
}

#[derive(Clone, Debug)]
pub struct PetalsInstance {
    pub params: PetalsParams,
    pub petals: usize,
    pub graph: KnowledgeGraph,
    /// Stem node the query starts from.
    pub stem_node: usize,
    /// Petal (0-based) and depth (1-based) of the targets.
    pub petal: usize,
    pub depth: usize,
    pub t1: usize,
    pub t2: usize,
}

/// Id of `a_k` in petal `i`.
pub fn petal_node(stem_len: usize, petal_len: usize, i: usize, k: usize) -> usize {
    stem_len + 1 + i * (2 * petal_len + 1) + k - 1
}

pub fn expected_nodes(c: usize, l: usize, t: usize) -> usize {
    (t + 1) + c * (2 * l + 1)
}

pub fn expected_edges(c: usize, l: usize, t: usize) -> usize {
    t + 2 * c * (l + 1)
}

/// Builds the flower graph of `params`.
pub fn build_graph(params: PetalsParams) -> Result<(KnowledgeGraph, usize)> {
    let sc = scheme(params.scheme)?;
    let (l, t) = (params.petal_len, params.stem_len);
    if l == 0 || t == 0 {
        return Err(FlockError::Config("petal and stem lengths must be positive".into()));
    }
    let c = sc.petals();
    let mut triples = Vec::with_capacity(expected_edges(c, l, t));
    for k in 1..=t {
        triples.push(Triple::new(k - 1, 0, k));
    }
    for (i, &(x, y)) in sc.pairs.iter().enumerate() {
        let a = |k: usize| petal_node(t, l, i, k);
        triples.push(Triple::new(0, x, a(1)));
        triples.push(Triple::new(0, y, a(2)));
        for j in 1..l {
            triples.push(Triple::new(a(2 * j - 1), x, a(2 * j + 1)));
            triples.push(Triple::new(a(2 * j), x, a(2 * j + 2)));
        }
        triples.push(Triple::new(a(2 * l - 1), x, a(2 * l + 1)));
        triples.push(Triple::new(a(2 * l), x, a(2 * l + 1)));
    }
    let mut names: Vec<String> = (0..=t).map(|k| format!("b{k}")).collect();
    for i in 0..c {
        for k in 1..=2 * l + 1 {
            names.push(format!("a{}_{}", i + 1, k));
        }
    }
    let rels = (0..=sc.num_petal_relations()).map(|r| format!("r{r}")).collect();
    Ok((KnowledgeGraph::with_names(names, rels, triples)?, c))
}

/// Instance with explicitly chosen stem node, petal and depth.
pub fn instance_with(params: PetalsParams, stem_node: usize, petal: usize, depth: usize) -> Result<PetalsInstance> {
    let (graph, c) = build_graph(params)?;
    let (l, t) = (params.petal_len, params.stem_len);
    if stem_node > t || petal >= c || depth == 0 || depth > l {
        return Err(contract(format!(
            "stem node {stem_node}, petal {petal}, depth {depth} invalid for {params:?}"
        )));
    }
    Ok(PetalsInstance {
        params,
        petals: c,
        graph,
        stem_node,
        petal,
        depth,
        t1: petal_node(t, l, petal, 2 * depth - 1),
        t2: petal_node(t, l, petal, 2 * depth),
    })
}

/// Samples the stem node, petal and depth uniformly.
pub fn generate_instance(params: PetalsParams, rng: &mut impl Rng) -> Result<PetalsInstance> {
    let c = scheme(params.scheme)?.petals();
    let s = rng.gen_range(0..=params.stem_len);
    let i = rng.gen_range(0..c);
    let j = rng.gen_range(1..=params.petal_len);
    instance_with(params, s, i, j)
}

/// All 220 instances: every scheme with `t in 1..=4` and `l in 1..=5`.
pub fn generate_benchmark(seed: u64) -> Result<Vec<PetalsInstance>> {
    let mut out = Vec::with_capacity(NUM_SCHEMES * 20);
    for sc in 1..=NUM_SCHEMES {
        for t in 1..=4 {
            for l in 1..=5 {
                let params = PetalsParams {
                    scheme: sc,
                    petal_len: l,
                    stem_len: t,
                };
                let mut rng = rng_for(seed, &[tag::PETALS, sc as u64, t as u64, l as u64]);
                out.push(generate_instance(params, &mut rng)?);
            }
        }
    }
    Ok(out)
}

impl PetalsInstance {
    pub fn query(&self) -> Query {
        Query::entity(self.stem_node, 0)
    }

    pub fn view(&self) -> GraphView<'_> {
        GraphView::new(&self.graph)
    }

    pub fn a(&self, i: usize, k: usize) -> usize {
        petal_node(self.params.stem_len, self.params.petal_len, i, k)
    }
}

/// Graph automorphism taking petal `i` onto petal `j`. The stem is fixed
/// pointwise. Among all valid petal permutations the lexicographically
/// smallest is returned, so `i == j` yields the identity.
pub fn petal_automorphism(inst: &PetalsInstance, i: usize, j: usize) -> Result<Isomorphism> {
    let sc = scheme(inst.params.scheme)?;
    let c = sc.petals();
    if i >= c || j >= c {
        return Err(contract(format!("petal index out of range for {c} petals")));
    }
    let nr = inst.graph.num_relations();
    let mut found = None;
    for_each_permutation(c, &mut |sigma| {
        if sigma[i] != j {
            return false;
        }
        let mut phi = vec![usize::MAX; nr];
        phi[0] = 0;
        let mut ok = true;
        for (p, &(x, y)) in sc.pairs.iter().enumerate() {
            let (x2, y2) = sc.pairs[sigma[p]];
            for (a, b) in [(x, x2), (y, y2)] {
                if phi[a] == usize::MAX {
                    phi[a] = b;
                } else if phi[a] != b {
                    ok = false;
                }
            }
        }
        if !ok {
            return false;
        }
        let mut seen = vec![false; nr];
        if phi
            .iter()
            .any(|&b| b == usize::MAX || std::mem::replace(&mut seen[b], true))
        {
            return false;
        }
        let (l, t) = (inst.params.petal_len, inst.params.stem_len);
        let mut nodes: Vec<usize> = (0..inst.graph.num_entities()).collect();
        for (p, &q) in sigma.iter().enumerate() {
            for k in 1..=2 * l + 1 {
                nodes[petal_node(t, l, p, k)] = petal_node(t, l, q, k);
            }
        }
        found = Some(Isomorphism {
            node_map: nodes,
            rel_map: phi,
        });
        true
    });
    let mu = found.ok_or_else(|| contract(format!("scheme {} has no automorphism from petal {i} to {j}", sc.id)))?;
    if !preserves(&inst.graph, &mu)? {
        return Err(contract(format!(
            "scheme {} map from petal {i} to {j} is not an automorphism",
            sc.id
        )));
    }
    Ok(mu)
}

/// Visits permutations of `0..n` in lexicographic order until `f` returns true.
pub(crate) fn for_each_permutation(n: usize, f: &mut dyn FnMut(&[usize]) -> bool) {
    fn rec(perm: &mut Vec<usize>, used: &mut [bool], f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if perm.len() == used.len() {
            return f(perm);
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                perm.push(v);
                if rec(perm, used, f) {
                    return true;
                }
                perm.pop();
                used[v] = false;
            }
        }
        false
    }
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], f);
}

/// Whether `mu` maps the triple multiset of `g` onto itself.
pub fn preserves(g: &KnowledgeGraph, mu: &Isomorphism) -> Result<bool> {
    Ok(apply_isomorphism(g, mu)?.sorted_triples() == g.sorted_triples())
}

/// Searches for an automorphism of `g` extending the given node and
/// relation assignments. Relation permutations that preserve per-relation
/// edge counts are enumerated, and for each one node images are found by
/// backtracking. Exhaustive; meant for small graphs.
pub fn find_automorphism(
    g: &KnowledgeGraph,
    node_pins: &[(usize, usize)],
    rel_pins: &[(usize, usize)],
) -> Option<Isomorphism> {
    let n = g.num_entities();
    let nr = g.num_relations();
    // Breadth-first order from the pinned nodes keeps candidate lists short.
    let mut order: Vec<usize> = node_pins.iter().map(|p| p.0).collect();
    let mut placed = vec![false; n];
    order.iter().for_each(|&v| placed[v] = true);
    let mut head = 0;
    loop {
        while head < order.len() {
            let v = order[head];
            head += 1;
            for w in g.neighbors(v) {
                if !placed[w] {
                    placed[w] = true;
                    order.push(w);
                }
            }
        }
        match (0..n).find(|&v| !placed[v]) {
            Some(v) => {
                placed[v] = true;
                order.push(v);
            }
            None => break,
        }
    }
    let pins: BTreeMap<usize, usize> = node_pins.iter().copied().collect();
    let rel_pin: BTreeMap<usize, usize> = rel_pins.iter().copied().collect();
    let mut found = None;
    for_each_permutation(nr, &mut |phi| {
        let fits = (0..nr).all(|r| {
            rel_pin.get(&r).is_none_or(|&p| p == phi[r])
                && g.edges_of_relation(r).len() == g.edges_of_relation(phi[r]).len()
        });
        if !fits {
            return false;
        }
        let mut search = NodeSearch {
            g,
            phi,
            order: &order,
            pins: &pins,
            pi: vec![usize::MAX; n],
            used: vec![false; n],
        };
        if search.run(0) {
            found = Some(Isomorphism {
                node_map: search.pi,
                rel_map: phi.to_vec(),
            });
            true
        } else {
            false
        }
    });
    let mu = found?;
    preserves(g, &mu).ok()?.then_some(mu)
}

struct NodeSearch<'a> {
    g: &'a KnowledgeGraph,
    phi: &'a [usize],
    order: &'a [usize],
    pins: &'a BTreeMap<usize, usize>,
    pi: Vec<usize>,
    used: Vec<bool>,
}

impl NodeSearch<'_> {
    /// Edges from `v` to every already placed node (and loops) must map
    /// onto the edges between the images.
    fn consistent(&self, v: usize, img: usize) -> bool {
        self.g.neighbors(v).all(|u| {
            let pu = if u == v { img } else { self.pi[u] };
            if pu == usize::MAX {
                return true;
            }
            let mut mine: Vec<(usize, Direction)> = self
                .g
                .edges_between(v, u)
                .into_iter()
                .map(|(r, d)| (self.phi[r], d))
                .collect();
            mine.sort();
            let mut theirs = self.g.edges_between(img, pu);
            theirs.sort();
            mine == theirs
        })
    }

    fn run(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let v = self.order[depth];
        let candidates: Vec<usize> = match self.pins.get(&v) {
            Some(&w) => vec![w],
            None => match self.g.neighbors(v).find(|&u| self.pi[u] != usize::MAX) {
                Some(u) => self.g.neighbors(self.pi[u]).collect(),
                None => (0..self.g.num_entities()).collect(),
            },
        };
        for img in candidates {
            if self.used[img] || self.g.degree(img) != self.g.degree(v) || !self.consistent(v, img) {
                continue;
            }
            self.pi[v] = img;
            self.used[img] = true;
            if self.run(depth + 1) {
                return true;
            }
            self.pi[v] = usize::MAX;
            self.used[img] = false;
        }
        false
    }
}

/// Evidence that the two targets of an instance are indistinguishable once
/// relations are identified up to automorphism.
#[derive(Clone, Debug)]
pub struct Certificate {
    /// Orbit representative of every relation.
    pub relation_class: Vec<usize>,
    /// Branch swap of the query petal, an automorphism of the collapsed graph.
    pub swap: Isomorphism,
}

/// Checks the certificate of one instance: petal automorphisms put `x_i`
/// and `y_i` of every petal in one relation orbit, and the branch swap of
/// the query petal preserves the graph with relations collapsed to orbits,
/// fixes the query and exchanges `t1` and `t2`.
pub fn certify(inst: &PetalsInstance) -> Result<Certificate> {
    let nr = inst.graph.num_relations();
    let mut parent: Vec<usize> = (0..nr).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for j in 0..inst.petals {
        let mu = petal_automorphism(inst, 0, j)?;
        for (r, &img) in mu.rel_map.iter().enumerate() {
            let (a, b) = (find(&mut parent, r), find(&mut parent, img));
            parent[a.max(b)] = a.min(b);
        }
        // Orbits are closed under composition; iterate the generator too.
        let mut power = mu.clone();
        for _ in 0..nr {
            power = power.then(&mu);
            for (r, &img) in power.rel_map.iter().enumerate() {
                let (a, b) = (find(&mut parent, r), find(&mut parent, img));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let class: Vec<usize> = (0..nr).map(|r| find(&mut parent, r)).collect();
    let sc = scheme(inst.params.scheme)?;
    let (x, y) = sc.pairs[inst.petal];
    if class[x] != class[y] {
        return Err(contract(format!("relations {x} and {y} are not in one orbit")));
    }
    let collapsed_triples: Vec<Triple> = inst
        .graph
        .triples()
        .iter()
        .map(|t| Triple::new(t.head, class[t.rel], t.tail))
        .collect();
    let collapsed = KnowledgeGraph::from_triples(inst.graph.num_entities(), nr, collapsed_triples)?;
    let mut nodes: Vec<usize> = (0..inst.graph.num_entities()).collect();
    for j in 1..=inst.params.petal_len {
        let (odd, even) = (inst.a(inst.petal, 2 * j - 1), inst.a(inst.petal, 2 * j));
        nodes[odd] = even;
        nodes[even] = odd;
    }
    let swap = Isomorphism::new(nodes, (0..nr).collect())?;
    if !preserves(&collapsed, &swap)? {
        return Err(contract("branch swap is not an automorphism of the collapsed graph"));
    }
    if swap.node_map[inst.stem_node] != inst.stem_node || swap.node_map[inst.t1] != inst.t2 {
        return Err(contract("branch swap does not fix the query or exchange the targets"));
    }
    Ok(Certificate {
        relation_class: class,
        swap,
    })
}

/// Whether some automorphism fixing the query maps `t1` to `t2`.
pub fn targets_automorphic(inst: &PetalsInstance) -> bool {
    find_automorphism(
        &inst.graph,
        &[(inst.stem_node, inst.stem_node), (inst.t1, inst.t2)],
        &[(0, 0)],
    )
    .is_some()
}

/// Colour, direction and neighbour colour of one incident edge.
type Mark = (usize, bool, usize);

/// Joint colour refinement of nodes and relations, started from the query
/// marks. Every relation is only known through its colour, so the result is
/// invariant under any renaming of nodes and relations.
pub fn relational_colours(g: &KnowledgeGraph, q: &Query) -> Vec<usize> {
    let n = g.num_entities();
    let nr = g.num_relations();
    let mut node: Vec<usize> = (0..n).map(|v| usize::from(v == q.head())).collect();
    let mut rel: Vec<usize> = (0..nr).map(|r| usize::from(Some(r) == q.rel())).collect();
    let classes = |c: &[usize]| c.iter().collect::<std::collections::BTreeSet<_>>().len();
    for _ in 0..n + nr + 1 {
        let node_sig: Vec<(usize, Vec<Mark>)> = (0..n)
            .map(|v| {
                let mut m: Vec<Mark> = g
                    .adjacency(v)
                    .iter()
                    .map(|e| (rel[e.rel], e.dir == Direction::Forward, node[e.node]))
                    .collect();
                m.sort_unstable();
                (node[v], m)
            })
            .collect();
        let mut by_rel: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nr];
        for t in g.triples() {
            by_rel[t.rel].push((node[t.head], node[t.tail]));
        }
        let rel_sig: Vec<(usize, Vec<(usize, usize)>)> = by_rel
            .into_iter()
            .enumerate()
            .map(|(r, mut m)| {
                m.sort_unstable();
                (rel[r], m)
            })
            .collect();
        let new_node = relabel(&node_sig);
        let new_rel = relabel(&rel_sig);
        let stable = classes(&new_node) == classes(&node) && classes(&new_rel) == classes(&rel);
        node = new_node;
        rel = new_rel;
        if stable {
            break;
        }
    }
    node
}

fn relabel<T: Ord + Clone>(sigs: &[T]) -> Vec<usize> {
    let mut uniq: Vec<T> = sigs.to_vec();
    uniq.sort();
    uniq.dedup();
    sigs.iter().map(|s| uniq.binary_search(s).unwrap_or(0)).collect()
}

/// Deterministic relation-invariant baseline. Scores are refinement colours;
/// exact ties are broken by a coin that alternates with the instance index,
/// favouring the first-listed target on even indices.
pub fn baseline_scores(inst: &PetalsInstance, index: usize) -> (f64, f64) {
    let colours = relational_colours(&inst.graph, &inst.query());
    let (s1, s2) = (colours[inst.t1] as f64, colours[inst.t2] as f64);
    if s1 == s2 {
        if index.is_multiple_of(2) {
            (s1 + 0.5, s2)
        } else {
            (s1, s2 + 0.5)
        }
    } else {
        (s1, s2)
    }
}

/// Fraction of pairs with `score_t1 > score_t2`; ties count as failures.
pub fn petals_accuracy(scores: &[(f64, f64)]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|(a, b)| a > b).count() as f64 / scores.len() as f64
}

/// Ensembled model scores of both targets for every instance.
pub fn model_scores(model: &Flock, instances: &[PetalsInstance], passes: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    instances
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let s = model.predict(
                &inst.view(),
                &inst.query(),
                passes,
                derive(seed, &[tag::EVAL, k as u64]),
            )?;
            Ok((s[inst.t1], s[inst.t2]))
        })
        .collect()
}

/// Training examples: the true target as positive, the false one as the
/// only negative.
pub struct PetalsSource<'a> {
    pub instances: &'a [PetalsInstance],
}

impl ExampleSource for PetalsSource<'_> {
    fn len(&self) -> usize {
        self.instances.len()
    }

    fn example(&self, index: usize, _rng: &mut crate::rng::FlockRng) -> Result<Example<'_>> {
        let inst = &self.instances[index];
        Ok(Example {
            view: inst.view(),
            query: inst.query(),
            positive: inst.t1,
            negatives: vec![inst.t2],
        })
    }
}

/// Writes instances as `DIR/index.tsv` plus one directory per instance
/// holding `train.txt` (tab-separated named triples) and `query.txt`.
///
/// `query.txt` uses the `key = value` format with keys `scheme`,
/// `petal_len`, `stem_len`, `petal`, `depth`, `query_head`,
/// `query_relation`, `t1` and `t2` (entities and relations by name).
pub fn save_benchmark(dir: &Path, instances: &[PetalsInstance]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::from("name\tscheme\tpetal_len\tstem_len\n");
    for (k, inst) in instances.iter().enumerate() {
        let p = inst.params;
        let name = format!("{k:03}_s{}_t{}_l{}", p.scheme, p.stem_len, p.petal_len);
        let _ = writeln!(index, "{name}\t{}\t{}\t{}", p.scheme, p.petal_len, p.stem_len);
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub)?;
        std::fs::write(sub.join("train.txt"), inst.graph.to_tsv())?;
        let g = &inst.graph;
        let meta = format!(
            "scheme = {}\npetal_len = {}\nstem_len = {}\npetal = {}\ndepth = {}\nquery_head = {}\nquery_relation = {}\nt1 = {}\nt2 = {}\n",
            p.scheme,
            p.petal_len,
            p.stem_len,
            inst.petal,
            inst.depth,
            g.entity_name(inst.stem_node),
            g.relation_name(0),
            g.entity_name(inst.t1),
            g.entity_name(inst.t2),
        );
        std::fs::write(sub.join("query.txt"), meta)?;
    }
    std::fs::write(dir.join("index.tsv"), index)?;
    Ok(())
}

pub fn is_benchmark_dir(dir: &Path) -> bool {
    dir.join("index.tsv").is_file()
}

/// Reads a directory written by [`save_benchmark`]. Instances are rebuilt
/// from their parameters and checked against the stored triples.
pub fn load_benchmark(dir: &Path) -> Result<Vec<PetalsInstance>> {
    let index_path = dir.join("index.tsv");
    let text = std::fs::read_to_string(&index_path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let name = line.split('\t').next().unwrap_or_default();
        let sub = dir.join(name);
        let meta = crate::config::parse_pairs(&std::fs::read_to_string(sub.join("query.txt"))?, name)?;
        let get = |key: &str| -> Result<&str> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| FlockError::Parse {
                    path: sub.join("query.txt"),
                    line: n + 1,
                    message: format!("missing {key}"),
                })
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| FlockError::Config(format!("{name}: {key} is not a number")))
        };
        let params = PetalsParams {
            scheme: num("scheme")?,
            petal_len: num("petal_len")?,
            stem_len: num("stem_len")?,
        };
        let stored = crate::kg::load_triples_with(&sub.join("train.txt"), LoadOptions::default())?;
        let (graph, _) = build_graph(params)?;
        let stem = graph
            .entity_id(get("query_head")?)
            .ok_or_else(|| FlockError::Config(format!("{name}: unknown query head")))?;
        let inst = instance_with(params, stem, num("petal")?, num("depth")?)?;
        let named = |g: &KnowledgeGraph| {
            let mut v: Vec<(String, String, String)> = g
                .triples()
                .iter()
                .map(|t| {
                    (
                        g.entity_name(t.head).to_string(),
                        g.relation_name(t.rel).to_string(),
                        g.entity_name(t.tail).to_string(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        if named(&stored) != named(&inst.graph)
            || graph.entity_name(inst.t1) != get("t1")?
            || graph.entity_name(inst.t2) != get("t2")?
        {
            return Err(FlockError::Config(format!(
                "{name}: stored instance does not match its parameters"
            )));
        }
        out.push(inst);
    }
    Ok(out)
}

/// Structural checks behind `flock verify --suite petals-structure`.
///
/// Regenerates the benchmark from `seed` and checks its composition, the
/// closed-form sizes, the petal automorphisms and the certificate of every
/// instance, that brute-force search finds no automorphism fixing the
/// query and exchanging the targets on instances of at most 30 nodes, and
/// that the relation-invariant baseline scores exactly 0.5.
pub fn structure_suite(seed: u64) -> Result<crate::verify::SuiteReport> {
    let mut rep = crate::verify::SuiteReport::new();
    let bench = generate_benchmark(seed)?;
    let per_scheme: Vec<usize> = (1..=NUM_SCHEMES)
        .map(|sc| bench.iter().filter(|i| i.params.scheme == sc).count())
        .collect();
    rep.check(
        bench.len() == 220 && per_scheme.iter().all(|&c| c == 20),
        format!("{} instances, per scheme {per_scheme:?}", bench.len()),
    );

    let (g, c) = build_graph(PetalsParams {
        scheme: 3,
        petal_len: 2,
        stem_len: 3,
    })?;
    rep.check(
        c == 4 && g.num_entities() == 24 && g.num_triples() == 27,
        format!(
            "c = 4, l = 2, t = 3: {} nodes, {} edges",
            g.num_entities(),
            g.num_triples()
        ),
    );
    let (g, _) = build_graph(PetalsParams {
        scheme: 1,
        petal_len: 1,
        stem_len: 1,
    })?;
    let stem = g.triples().iter().filter(|t| t.rel == 0).count();
    rep.check(
        stem == 1 && g.num_triples() - stem == 8,
        format!(
            "c = 2, l = 1, t = 1: {stem} stem edge, {} petal edges",
            g.num_triples() - stem
        ),
    );
    let fig = instance_with(
        PetalsParams {
            scheme: 3,
            petal_len: 2,
            stem_len: 3,
        },
        0,
        0,
        1,
    )?;
    let names = (fig.graph.entity_name(fig.t1), fig.graph.entity_name(fig.t2));
    rep.check(
        fig.query() == Query::entity(0, 0) && names == ("a1_1", "a1_2"),
        format!("query (b0, r0, ?) targets {} and {}", names.0, names.1),
    );

    let sizes_ok = bench.iter().all(|i| {
        let (c, l, t) = (i.petals, i.params.petal_len, i.params.stem_len);
        i.graph.num_entities() == expected_nodes(c, l, t) && i.graph.num_triples() == expected_edges(c, l, t)
    });
    rep.check(
        sizes_ok,
        "every instance matches the closed-form node and edge counts".into(),
    );

    let mut cert_failures = Vec::new();
    for (k, inst) in bench.iter().enumerate() {
        let res = (0..inst.petals)
            .try_for_each(|j| petal_automorphism(inst, 0, j).map(|_| ()))
            .and_then(|_| certify(inst).map(|_| ()));
        if let Err(e) = res {
            cert_failures.push(format!("instance {k}: {e}"));
        }
    }
    rep.check(
        cert_failures.is_empty(),
        format!("petal automorphisms and certificates: {} failures", cert_failures.len()),
    );
    for f in cert_failures.iter().take(5) {
        rep.note(f.clone());
    }

    let small: Vec<&PetalsInstance> = bench.iter().filter(|i| i.graph.num_entities() <= 30).collect();
    let automorphic = small.iter().filter(|i| targets_automorphic(i)).count();
    rep.check(
        !small.is_empty() && automorphic == 0,
        format!(
            "brute force: {} of {} instances with at most 30 nodes have an automorphism fixing the query and swapping the targets",
            automorphic,
            small.len()
        ),
    );

    let tied = bench.iter().all(|i| {
        let c = relational_colours(&i.graph, &i.query());
        c[i.t1] == c[i.t2]
    });
    let scores: Vec<(f64, f64)> = bench.iter().enumerate().map(|(k, i)| baseline_scores(i, k)).collect();
    let acc = petals_accuracy(&scores);
    rep.check(
        tied && acc == 0.5,
        format!("relation-invariant baseline accuracy {acc} (targets tied: {tied})"),
    );
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(scheme: usize, l: usize, t: usize) -> PetalsParams {
        PetalsParams {
            scheme,
            petal_len: l,
            stem_len: t,
        }
    }

    #[test]
    fn closed_form_sizes() {
        // Scheme 3 has four petals.
        let (g, c) = build_graph(params(3, 2, 3)).unwrap();
        assert_eq!(c, 4);
        assert_eq!(g.num_entities(), 24);
        assert_eq!(g.num_triples(), 27);
        let (g, c) = build_graph(params(1, 1, 1)).unwrap();
        assert_eq!(c, 2);
        assert_eq!(g.num_entities(), 1 + 1 + 2 * 3);
        assert_eq!(g.triples().iter().filter(|t| t.rel == 0).count(), 1);
        assert_eq!(g.triples().iter().filter(|t| t.rel != 0).count(), 8);
    }

    #[test]
    fn figure_instance() {
        let inst = instance_with(params(3, 2, 3), 0, 0, 1).unwrap();
        assert_eq!(inst.query(), Query::entity(0, 0));
        assert_eq!(inst.graph.entity_name(inst.t1), "a1_1");
        assert_eq!(inst.graph.entity_name(inst.t2), "a1_2");
    }

    #[test]
    fn benchmark_shape() {
        let b = generate_benchmark(0).unwrap();
        assert_eq!(b.len(), 220);
        for sc in 1..=NUM_SCHEMES {
            assert_eq!(b.iter().filter(|i| i.params.scheme == sc).count(), 20);
        }
        for inst in &b {
            let (c, l, t) = (inst.petals, inst.params.petal_len, inst.params.stem_len);
            assert_eq!(inst.graph.num_entities(), expected_nodes(c, l, t));
            assert_eq!(inst.graph.num_triples(), expected_edges(c, l, t));
            assert!(inst.stem_node <= t && (1..=l).contains(&inst.depth));
        }
        let again = generate_benchmark(0).unwrap();
        assert!(b
            .iter()
            .zip(&again)
            .all(|(x, y)| (x.stem_node, x.t1, x.t2) == (y.stem_node, y.t1, y.t2)));
    }

    #[test]
    fn same_petal_gives_identity() {
        let inst = instance_with(params(8, 2, 1), 0, 0, 1).unwrap();
        for i in 0..inst.petals {
            let mu = petal_automorphism(&inst, i, i).unwrap();
            assert_eq!(
                mu,
                Isomorphism::identity(inst.graph.num_entities(), inst.graph.num_relations())
            );
        }
    }

    #[test]
    fn cyclic_rotation_has_order_c() {
        for sc in 1..=5 {
            let inst = instance_with(params(sc, 2, 2), 1, 0, 1).unwrap();
            let c = inst.petals;
            let mu = petal_automorphism(&inst, 0, 1).unwrap();
            let mut p = mu.clone();
            for _ in 1..c {
                assert_ne!(
                    p,
                    Isomorphism::identity(inst.graph.num_entities(), inst.graph.num_relations())
                );
                p = p.then(&mu);
            }
            assert_eq!(
                p,
                Isomorphism::identity(inst.graph.num_entities(), inst.graph.num_relations())
            );
        }
    }

    #[test]
    fn every_scheme_links_all_petals() {
        for sc in 1..=NUM_SCHEMES {
            let inst = instance_with(params(sc, 1, 1), 0, 0, 1).unwrap();
            for i in 0..inst.petals {
                for j in 0..inst.petals {
                    petal_automorphism(&inst, i, j).unwrap();
                }
            }
        }
    }

    #[test]
    fn brute_force_finds_rotation_but_not_branch_swap() {
        let inst = instance_with(params(2, 1, 1), 0, 0, 1).unwrap();
        let a = |i, k| inst.a(i, k);
        assert!(find_automorphism(&inst.graph, &[(0, 0), (a(0, 1), a(1, 1))], &[]).is_some());
        assert!(!targets_automorphic(&inst));
    }

    #[test]
    fn accuracy_is_strict() {
        assert_eq!(petals_accuracy(&[(1.0, 0.0), (0.5, 0.5), (0.0, 1.0), (2.0, 1.0)]), 0.5);
    }

    #[test]
    fn colours_tie_on_targets() {
        let inst = instance_with(params(4, 3, 2), 2, 1, 2).unwrap();
        let c = relational_colours(&inst.graph, &inst.query());
        assert_eq!(c[inst.t1], c[inst.t2]);
        assert_ne!(c[inst.stem_node], c[inst.t1]);
    }

    #[test]
    fn save_and_load() {
        let b: Vec<PetalsInstance> = generate_benchmark(3).unwrap().into_iter().step_by(37).collect();
        let dir = tempfile::tempdir().unwrap();
        save_benchmark(dir.path(), &b).unwrap();
        let back = load_benchmark(dir.path()).unwrap();
        assert_eq!(back.len(), b.len());
        for (x, y) in b.iter().zip(&back) {
            assert_eq!((x.params, x.stem_node, x.t1, x.t2), (y.params, y.stem_node, y.t1, y.t2));
        }
    }
}
