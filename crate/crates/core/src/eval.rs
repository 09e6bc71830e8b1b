//! Filtered ranking metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write as _;
use std::path::Path;

use crate::error::{contract, Result};
use crate::kg::{KnowledgeGraph, Query, Triple};
use crate::model::{Flock, Task};
use crate::rng::{derive, tag};
use crate::train::remove_query_edges;

/// Known true answers for each query, collected over every split.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
    rels: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut f = Self::default();
        for t in triples {
            f.tails.entry((t.head, t.rel)).or_default().insert(t.tail);
            f.heads.entry((t.tail, t.rel)).or_default().insert(t.head);
            f.rels.entry((t.head, t.tail)).or_default().insert(t.rel);
        }
        f
    }

    /// Known answers of a query.
    pub fn answers(&self, q: &Query) -> Option<&HashSet<usize>> {
        match *q {
            Query::Entity {
                head,
                rel,
                inverse: false,
            } => self.tails.get(&(head, rel)),
            Query::Entity {
                head,
                rel,
                inverse: true,
            } => self.heads.get(&(head, rel)),
            Query::Relation { head, tail } => self.rels.get(&(head, tail)),
        }
    }

    /// Known answers other than `truth`, as a sorted list.
    pub fn filtered(&self, q: &Query, truth: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .answers(q)
            .map(|s| s.iter().copied().filter(|&x| x != truth).collect())
            .unwrap_or_default();
        v.sort_unstable();
        v
    }
}

/// `1 + #(strictly greater) + #(ties) / 2` over candidates not in `filter`.
///
/// Ties are resolved by the mean rank, so `m` equal scores give `(m + 1) / 2`.
pub fn filtered_rank(scores: &[f64], true_idx: usize, filter: &[usize]) -> Result<f64> {
    if true_idx >= scores.len() {
        return Err(contract(format!(
            "true index {true_idx} outside {} scores",
            scores.len()
        )));
    }
    if filter.contains(&true_idx) {
        return Err(contract("the true answer is in its own filter set"));
    }
    let skip: HashSet<usize> = filter.iter().copied().collect();
    let target = scores[true_idx];
    let (mut greater, mut ties) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == true_idx || skip.contains(&i) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    Ok(1.0 + greater as f64 + ties as f64 / 2.0)
}

/// Expected reciprocal rank of a uniformly random ranking of `m` candidates.
pub fn random_reciprocal_rank(m: usize) -> f64 {
    (1..=m).map(|k| 1.0 / k as f64).sum::<f64>() / m as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub count: usize,
    pub mrr: f64,
    pub mean_rank: f64,
    pub hits: BTreeMap<usize, f64>,
    /// MRR a random scorer would reach on the same candidate sets.
    pub random_mrr: f64,
}

impl MetricReport {
    /// Aggregates `(rank, candidates)` pairs.
    pub fn from_ranks(ranks: &[(f64, usize)]) -> Self {
        let n = ranks.len().max(1) as f64;
        let hits = [1usize, 3, 10]
            .into_iter()
            .map(|k| (k, ranks.iter().filter(|(r, _)| *r <= k as f64).count() as f64 / n))
            .collect();
        Self {
            count: ranks.len(),
            mrr: ranks.iter().map(|(r, _)| 1.0 / r).sum::<f64>() / n,
            mean_rank: ranks.iter().map(|(r, _)| r).sum::<f64>() / n,
            hits,
            random_mrr: ranks.iter().map(|&(_, m)| random_reciprocal_rank(m)).sum::<f64>() / n,
        }
    }

    pub fn to_json(&self) -> String {
        let hits: Vec<String> = self.hits.iter().map(|(k, v)| format!("\"hits@{k}\": {v}")).collect();
        format!(
            "{{\"count\": {}, \"mrr\": {}, \"mean_rank\": {}, {}, \"random_mrr\": {}}}",
            self.count,
            self.mrr,
            self.mean_rank,
            hits.join(", "),
            self.random_mrr
        )
    }
}

/// Rank of one evaluation query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRank {
    pub triple: Triple,
    /// `tail`, `head` or `relation`.
    pub side: &'static str,
    pub rank: f64,
    pub candidates: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub passes: usize,
    pub seed: u64,
    /// Skip head-side queries of the entity task.
    pub tail_only: bool,
    /// Walks per scenario; `None` keeps the model's setting.
    pub walks: Option<usize>,
    /// Evaluate at most this many triples (0 = all).
    pub limit: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            passes: 1,
            seed: 0,
            tail_only: false,
            walks: None,
            limit: 0,
        }
    }
}

/// The queries that evaluate one triple, with the index of the true answer.
pub fn queries_for(t: Triple, task: Task, tail_only: bool) -> Vec<(Query, usize, &'static str)> {
    match task {
        Task::Entity => {
            let mut v = vec![(Query::entity(t.head, t.rel), t.tail, "tail")];
            if !tail_only {
                v.push((
                    Query::Entity {
                        head: t.tail,
                        rel: t.rel,
                        inverse: true,
                    },
                    t.head,
                    "head",
                ));
            }
            v
        }
        Task::Relation => vec![(
            Query::Relation {
                head: t.head,
                tail: t.tail,
            },
            t.rel,
            "relation",
        )],
    }
}

/// Ranks `triples` against `context` with filtering. Edges between a test
/// triple's endpoints are hidden from the walks, as during training.
pub fn evaluate(
    model: &Flock,
    context: &KnowledgeGraph,
    triples: &[Triple],
    filter: &FilterIndex,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<QueryRank>)> {
    let mut model_local;
    let model = match opts.walks {
        Some(n) if n != model.config.base_walks => {
            model_local = model.clone();
            model_local.config.base_walks = n;
            &model_local
        }
        _ => model,
    };
    let take = if opts.limit == 0 {
        triples.len()
    } else {
        opts.limit.min(triples.len())
    };
    let mut out = Vec::new();
    for (i, &t) in triples[..take].iter().enumerate() {
        let view = remove_query_edges(context, t);
        for (k, (q, truth, side)) in queries_for(t, model.config.task, opts.tail_only)
            .into_iter()
            .enumerate()
        {
            let seed = derive(opts.seed, &[tag::EVAL, i as u64, k as u64]);
            let scores = model.predict(&view, &q, opts.passes, seed)?;
            let f = filter.filtered(&q, truth);
            let rank = filtered_rank(&scores, truth, &f)?;
            out.push(QueryRank {
                triple: t,
                side,
                rank,
                candidates: scores.len() - f.len(),
            });
        }
    }
    let pairs: Vec<(f64, usize)> = out.iter().map(|r| (r.rank, r.candidates)).collect();
    Ok((MetricReport::from_ranks(&pairs), out))
}

pub fn write_ranks_csv(path: &Path, graph: &KnowledgeGraph, ranks: &[QueryRank]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "head,relation,tail,side,rank,candidates")?;
    for r in ranks {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            graph.entity_name(r.triple.head),
            graph.relation_name(r.triple.rel),
            graph.entity_name(r.triple.tail),
            r.side,
            r.rank,
            r.candidates
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.5, 0.7, 0.2];
        assert_eq!(filtered_rank(&s, 2, &[0]).unwrap(), 1.0);
        assert_eq!(filtered_rank(&s, 2, &[]).unwrap(), 2.0);
        assert_eq!(filtered_rank(&[0.3; 5], 1, &[]).unwrap(), 3.0);
        assert!(filtered_rank(&s, 2, &[2]).is_err());
        assert!(filtered_rank(&s, 4, &[]).is_err());
    }

    #[test]
    fn random_expectation_is_harmonic_mean() {
        assert_eq!(random_reciprocal_rank(1), 1.0);
        assert!((random_reciprocal_rank(4) - (1.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn report_aggregates() {
        let r = MetricReport::from_ranks(&[(1.0, 4), (4.0, 4)]);
        assert_eq!(r.mrr, 0.625);
        assert_eq!(r.hits[&1], 0.5);
        assert_eq!(r.hits[&3], 0.5);
        assert_eq!(r.hits[&10], 1.0);
        assert!(r.to_json().contains("\"hits@10\": 1"));
    }

    #[test]
    fn filter_sides() {
        let ts = [
            Triple::new(0, 0, 1),
            Triple::new(0, 0, 2),
            Triple::new(3, 0, 2),
            Triple::new(0, 1, 1),
        ];
        let f = FilterIndex::new(&ts);
        assert_eq!(f.filtered(&Query::entity(0, 0), 1), vec![2]);
        let inv = Query::Entity {
            head: 2,
            rel: 0,
            inverse: true,
        };
        assert_eq!(f.filtered(&inv, 0), vec![3]);
        assert_eq!(f.filtered(&Query::Relation { head: 0, tail: 1 }, 0), vec![1]);
    }
}
