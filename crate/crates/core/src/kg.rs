//! Knowledge-graph storage, traversal index, relabelling and TSV I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{contract, FlockError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// One traversable edge seen from a node: go to `node` via `rel` in `dir`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdjEntry {
    pub node: usize,
    pub rel: usize,
    pub dir: Direction,
}

/// A distinct neighbour and the span of its entries in the owner's
/// adjacency list.
#[derive(Clone, Copy, Debug)]
struct NeighborSpan {
    node: usize,
    start: u32,
    end: u32,
}

/// Query handed to the model.
///
/// Entity queries ask for the tail of `(head, rel, ?)`; with `inverse` set
/// they ask for the head of `(?, rel, head)` and the walker treats `rel` as
/// traversed backwards. Relation queries ask for `(head, ?, tail)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Query {
    Entity { head: usize, rel: usize, inverse: bool },
    Relation { head: usize, tail: usize },
}

impl Query {
    pub fn entity(head: usize, rel: usize) -> Self {
        Query::Entity {
            head,
            rel,
            inverse: false,
        }
    }

    pub fn head(&self) -> usize {
        match *self {
            Query::Entity { head, .. } | Query::Relation { head, .. } => head,
        }
    }

    pub fn rel(&self) -> Option<usize> {
        match *self {
            Query::Entity { rel, .. } => Some(rel),
            Query::Relation { .. } => None,
        }
    }

    pub fn tail(&self) -> Option<usize> {
        match *self {
            Query::Relation { tail, .. } => Some(tail),
            Query::Entity { .. } => None,
        }
    }

    pub fn is_relation(&self) -> bool {
        matches!(self, Query::Relation { .. })
    }
}

/// Immutable multi-relational graph with a neighbour index.
///
/// Every triple `(h, r, t)` appears twice in the adjacency: forward at `h`
/// and inverse at `t`. Adjacency lists are sorted by (neighbour, relation,
/// direction), so the edges between two nodes form one contiguous run.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    adjacency: Vec<Vec<AdjEntry>>,
    neighbors: Vec<Vec<NeighborSpan>>,
    edges_by_relation: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph over ids `0..num_entities` and `0..num_relations`.
    /// Names default to the decimal ids.
    pub fn from_triples(num_entities: usize, num_relations: usize, triples: Vec<Triple>) -> Result<Self> {
        let entity_names = (0..num_entities).map(|i| i.to_string()).collect();
        let relation_names = (0..num_relations).map(|i| i.to_string()).collect();
        Self::with_names(entity_names, relation_names, triples)
    }

    pub fn with_names(entity_names: Vec<String>, relation_names: Vec<String>, triples: Vec<Triple>) -> Result<Self> {
        let (ne, nr) = (entity_names.len(), relation_names.len());
        for t in &triples {
            if t.head >= ne || t.tail >= ne || t.rel >= nr {
                return Err(contract(format!(
                    "triple ({}, {}, {}) out of range for {ne} entities and {nr} relations",
                    t.head, t.rel, t.tail
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); ne];
        let mut edges_by_relation = vec![Vec::new(); nr];
        for (i, t) in triples.iter().enumerate() {
            adjacency[t.head].push(AdjEntry {
                node: t.tail,
                rel: t.rel,
                dir: Direction::Forward,
            });
            adjacency[t.tail].push(AdjEntry {
                node: t.head,
                rel: t.rel,
                dir: Direction::Inverse,
            });
            edges_by_relation[t.rel].push(i);
        }
        let mut neighbors = Vec::with_capacity(ne);
        for adj in adjacency.iter_mut() {
            adj.sort();
            let mut spans: Vec<NeighborSpan> = Vec::new();
            for (i, e) in adj.iter().enumerate() {
                match spans.last_mut() {
                    Some(s) if s.node == e.node => s.end = i as u32 + 1,
                    _ => spans.push(NeighborSpan {
                        node: e.node,
                        start: i as u32,
                        end: i as u32 + 1,
                    }),
                }
            }
            neighbors.push(spans);
        }
        Ok(Self {
            num_entities: ne,
            num_relations: nr,
            triples,
            entity_names,
            relation_names,
            adjacency,
            neighbors,
            edges_by_relation,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_names.iter().position(|n| n == name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_names.iter().position(|n| n == name)
    }

    pub fn adjacency(&self, v: usize) -> &[AdjEntry] {
        &self.adjacency[v]
    }

    /// Distinct neighbours of `v` in increasing id order.
    pub fn neighbors(&self, v: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.neighbors[v].iter().map(|s| s.node)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub(crate) fn neighbor_at(&self, v: usize, k: usize) -> usize {
        self.neighbors[v][k].node
    }

    /// Slice of `v`'s adjacency whose entries lead to the `k`-th neighbour.
    pub(crate) fn edges_to_neighbor(&self, v: usize, k: usize) -> &[AdjEntry] {
        let s = self.neighbors[v][k];
        &self.adjacency[v][s.start as usize..s.end as usize]
    }

    /// Every edge joining `v` to `w`, as (relation, direction) seen from `v`,
    /// ordered by relation then direction.
    pub fn edges_between(&self, v: usize, w: usize) -> Vec<(usize, Direction)> {
        match self.neighbors[v].binary_search_by_key(&w, |s| s.node) {
            Ok(k) => self.edges_to_neighbor(v, k).iter().map(|e| (e.rel, e.dir)).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Indices into [`Self::triples`] of edges typed `rel`.
    pub fn edges_of_relation(&self, rel: usize) -> &[usize] {
        &self.edges_by_relation[rel]
    }

    /// Triples in sorted order, for multiset comparisons.
    pub fn sorted_triples(&self) -> Vec<Triple> {
        let mut t = self.triples.clone();
        t.sort();
        t
    }

    /// Writes `head<TAB>rel<TAB>tail` lines using the stored names.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_names[t.head], self.relation_names[t.rel], self.entity_names[t.tail]
            );
        }
        out
    }
}

/// A pair of bijections relabelling entities (`node_map`) and relations
/// (`rel_map`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Isomorphism {
    pub node_map: Vec<usize>,
    pub rel_map: Vec<usize>,
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&x| x < p.len() && !std::mem::replace(&mut seen[x], true))
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

impl Isomorphism {
    pub fn new(node_map: Vec<usize>, rel_map: Vec<usize>) -> Result<Self> {
        if !is_permutation(&node_map) || !is_permutation(&rel_map) {
            return Err(contract("isomorphism maps must be permutations"));
        }
        Ok(Self { node_map, rel_map })
    }

    pub fn identity(num_entities: usize, num_relations: usize) -> Self {
        Self {
            node_map: (0..num_entities).collect(),
            rel_map: (0..num_relations).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            node_map: invert(&self.node_map),
            rel_map: invert(&self.rel_map),
        }
    }

    /// `other` after `self`.
    pub fn then(&self, other: &Isomorphism) -> Self {
        Self {
            node_map: self.node_map.iter().map(|&x| other.node_map[x]).collect(),
            rel_map: self.rel_map.iter().map(|&x| other.rel_map[x]).collect(),
        }
    }

    pub fn validate_for(&self, g: &KnowledgeGraph) -> Result<()> {
        if self.node_map.len() != g.num_entities() || self.rel_map.len() != g.num_relations() {
            return Err(contract(format!(
                "isomorphism over {}/{} ids applied to graph with {}/{}",
                self.node_map.len(),
                self.rel_map.len(),
                g.num_entities(),
                g.num_relations()
            )));
        }
        if !is_permutation(&self.node_map) || !is_permutation(&self.rel_map) {
            return Err(contract("isomorphism maps must be permutations"));
        }
        Ok(())
    }

    pub fn apply_query(&self, q: &Query) -> Query {
        match *q {
            Query::Entity { head, rel, inverse } => Query::Entity {
                head: self.node_map[head],
                rel: self.rel_map[rel],
                inverse,
            },
            Query::Relation { head, tail } => Query::Relation {
                head: self.node_map[head],
                tail: self.node_map[tail],
            },
        }
    }

    pub fn apply_triple(&self, t: &Triple) -> Triple {
        Triple::new(self.node_map[t.head], self.rel_map[t.rel], self.node_map[t.tail])
    }
}

/// Relabels `g` so that entity `x` becomes `π(x)` and relation `y` becomes
/// `φ(y)`. Names travel with their ids.
pub fn apply_isomorphism(g: &KnowledgeGraph, mu: &Isomorphism) -> Result<KnowledgeGraph> {
    mu.validate_for(g)?;
    let mut entity_names = vec![String::new(); g.num_entities()];
    for (x, name) in g.entity_names.iter().enumerate() {
        entity_names[mu.node_map[x]] = name.clone();
    }
    let mut relation_names = vec![String::new(); g.num_relations()];
    for (y, name) in g.relation_names.iter().enumerate() {
        relation_names[mu.rel_map[y]] = name.clone();
    }
    let triples = g.triples.iter().map(|t| mu.apply_triple(t)).collect();
    KnowledgeGraph::with_names(entity_names, relation_names, triples)
}

pub fn apply_isomorphism_to_query(q: &Query, mu: &Isomorphism) -> Query {
    mu.apply_query(q)
}

/// Loader options.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Drop repeated identical lines instead of keeping them as parallel edges.
    pub dedup: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { dedup: true }
    }
}

/// Name interning shared by the splits of one dataset.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn entity(&mut self, name: &str) -> usize {
        intern(&mut self.entities, &mut self.entity_ids, name)
    }

    pub fn relation(&mut self, name: &str) -> usize {
        intern(&mut self.relations, &mut self.relation_ids, name)
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_string());
    ids.insert(name.to_string(), id);
    id
}

/// Parses triple lines, interning names into `vocab`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_triples(text: &str, path: &Path, vocab: &mut Vocab, opts: LoadOptions) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(FlockError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let t = Triple::new(vocab.entity(cols[0]), vocab.relation(cols[1]), vocab.entity(cols[2]));
        if !opts.dedup || seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Loads a single triple file into a graph.
pub fn load_triples(path: &Path) -> Result<KnowledgeGraph> {
    load_triples_with(path, LoadOptions::default())
}

pub fn load_triples_with(path: &Path, opts: LoadOptions) -> Result<KnowledgeGraph> {
    let text = std::fs::read_to_string(path)?;
    let mut vocab = Vocab::default();
    let triples = parse_triples(&text, path, &mut vocab, opts)?;
    if triples.is_empty() {
        return Err(FlockError::EmptyGraph(path.display().to_string()));
    }
    KnowledgeGraph::with_names(vocab.entities, vocab.relations, triples)
}

/// A `train.txt` / `valid.txt` / `test.txt` directory sharing one vocabulary.
///
/// `graph` holds the training triples and is the context graph the model
/// walks on; it is sized to the full vocabulary so evaluation entities that
/// never occur in training are simply isolated.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub graph: KnowledgeGraph,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl Dataset {
    pub fn load(dir: &Path, opts: LoadOptions) -> Result<Self> {
        let mut vocab = Vocab::default();
        let mut split = |name: &str, required: bool| -> Result<Vec<Triple>> {
            let path = dir.join(name);
            if !path.exists() && !required {
                return Ok(Vec::new());
            }
            let text = std::fs::read_to_string(&path)?;
            parse_triples(&text, &path, &mut vocab, opts)
        };
        let train = split("train.txt", true)?;
        let valid = split("valid.txt", false)?;
        let test = split("test.txt", false)?;
        if train.is_empty() {
            return Err(FlockError::EmptyGraph(dir.join("train.txt").display().to_string()));
        }
        let graph = KnowledgeGraph::with_names(vocab.entities, vocab.relations, train.clone())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            graph,
            train,
            valid,
            test,
        })
    }

    /// Writes the three splits using the graph's names.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, triples) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut s = String::new();
            for t in triples {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}",
                    self.graph.entity_name(t.head),
                    self.graph.relation_name(t.rel),
                    self.graph.entity_name(t.tail)
                );
            }
            std::fs::write(dir.join(name), s)?;
        }
        Ok(())
    }
}

/// A small family-tree dataset with a planted two-hop rule.
///
/// Each entity after the first has a random earlier entity as `parent_of`
/// source; `grandparent_of` holds exactly when two `parent_of` edges
/// compose; `knows` edges are uniform noise filling the graph up to
/// `total` triples. Valid and test hold `held_out` `grandparent_of` triples
/// each; every `parent_of` edge stays in train, so every held-out triple is
/// implied by the training graph.
pub fn composition_dataset(seed: u64, entities: usize, total: usize, held_out: usize) -> Result<Dataset> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut rng = crate::rng::rng_for(seed, &[crate::rng::tag::SYNTH]);
    let (parent_of, grandparent_of, knows) = (0, 1, 2);
    let parent: Vec<Option<usize>> = (0..entities)
        .map(|v| (v > 0).then(|| rng.gen_range(v.saturating_sub(6)..v)))
        .collect();
    let mut facts: std::collections::BTreeSet<Triple> = std::collections::BTreeSet::new();
    let mut rule = Vec::new();
    for v in 0..entities {
        if let Some(p) = parent[v] {
            facts.insert(Triple::new(p, parent_of, v));
            if let Some(g) = parent[p] {
                rule.push(Triple::new(g, grandparent_of, v));
            }
        }
    }
    if rule.len() < 2 * held_out || facts.len() + rule.len() > total {
        return Err(contract("composition dataset: sizes do not fit"));
    }
    rule.shuffle(&mut rng);
    let test = rule[..held_out].to_vec();
    let valid = rule[held_out..2 * held_out].to_vec();
    facts.extend(rule[2 * held_out..].iter().copied());
    let mut noise = 0;
    while facts.len() + 2 * held_out < total {
        let (a, b) = (rng.gen_range(0..entities), rng.gen_range(0..entities));
        if a != b && facts.insert(Triple::new(a, knows, b)) {
            noise += 1;
        }
        if noise > 100 * total {
            return Err(contract("composition dataset: cannot place noise edges"));
        }
    }
    let train: Vec<Triple> = facts.into_iter().collect();
    let names = (0..entities).map(|v| format!("e{v}")).collect();
    let rels = ["parent_of", "grandparent_of", "knows"].map(String::from).to_vec();
    let graph = KnowledgeGraph::with_names(names, rels, train.clone())?;
    Ok(Dataset {
        dir: PathBuf::new(),
        graph,
        train,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, opts: LoadOptions) -> Result<KnowledgeGraph> {
        let mut vocab = Vocab::default();
        let triples = parse_triples(text, Path::new("mem"), &mut vocab, opts)?;
        if triples.is_empty() {
            return Err(FlockError::EmptyGraph("mem".into()));
        }
        KnowledgeGraph::with_names(vocab.entities, vocab.relations, triples)
    }

    #[test]
    fn single_fact() {
        let g = parse("a\tr\tb\n", LoadOptions::default()).unwrap();
        assert_eq!((g.num_entities(), g.num_relations(), g.num_triples()), (2, 1, 1));
    }

    #[test]
    fn duplicates_follow_flag() {
        let text = "a\tr\tb\na\tr\tb\n";
        assert_eq!(parse(text, LoadOptions { dedup: true }).unwrap().num_triples(), 1);
        let multi = parse(text, LoadOptions { dedup: false }).unwrap();
        assert_eq!(multi.num_triples(), 2);
        assert_eq!(multi.edges_between(0, 1).len(), 2);
    }

    #[test]
    fn star_wars_counts() {
        let text = "Luke Skywalker\tfriendWith\tYoda\n\
                    Luke Skywalker\tlike\tHan Solo\n\
                    Luke Skywalker\tdislike\tEmperor\n\
                    Han Solo\tdislike\tJabba\n\
                    Emperor\tdislike\tJabba\n\
                    Luke Skywalker\tdislike\tDarth Vader\n\
                    Luke Skywalker\tlike\tChewbacca\n\
                    Darth Vader\tlike\tLeia\n\
                    Chewbacca\tlike\tLeia\n";
        let g = parse(text, LoadOptions::default()).unwrap();
        assert_eq!((g.num_entities(), g.num_relations(), g.num_triples()), (8, 3, 9));
        assert_eq!(g.entity_name(0), "Luke Skywalker");
        assert_eq!(g.relation_id("dislike"), Some(2));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("# header\na\tr\tb\na\tb\n", LoadOptions::default()).unwrap_err();
        match err {
            FlockError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse("# nothing\n\n", LoadOptions::default()),
            Err(FlockError::EmptyGraph(_))
        ));
    }

    #[test]
    fn edges_between_examples() {
        let g = KnowledgeGraph::from_triples(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(g.edges_between(0, 1), vec![(0, Direction::Forward)]);
        assert_eq!(g.edges_between(1, 0), vec![(0, Direction::Inverse)]);
        let g = KnowledgeGraph::from_triples(2, 2, vec![Triple::new(0, 0, 1), Triple::new(1, 1, 0)]).unwrap();
        assert_eq!(
            g.edges_between(0, 1),
            vec![(0, Direction::Forward), (1, Direction::Inverse)]
        );
    }

    #[test]
    fn isomorphism_examples() {
        let g = KnowledgeGraph::from_triples(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let mu = Isomorphism::new(vec![1, 0], vec![0]).unwrap();
        let h = apply_isomorphism(&g, &mu).unwrap();
        assert_eq!(h.triples(), &[Triple::new(1, 0, 0)]);
        let back = apply_isomorphism(&h, &mu.inverse()).unwrap();
        assert_eq!(back.sorted_triples(), g.sorted_triples());

        let mu = Isomorphism::new(vec![3, 1, 2, 0], vec![2, 0, 1]).unwrap();
        let q = Query::entity(0, 2);
        assert_eq!(apply_isomorphism_to_query(&q, &mu), Query::entity(3, 1));
    }

    #[test]
    fn size_mismatch_is_contract_violation() {
        let g = KnowledgeGraph::from_triples(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let mu = Isomorphism::identity(3, 1);
        assert!(matches!(apply_isomorphism(&g, &mu), Err(FlockError::Contract(_))));
        assert!(Isomorphism::new(vec![0, 0], vec![0]).is_err());
    }
}
