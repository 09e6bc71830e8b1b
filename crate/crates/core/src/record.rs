//! Anonymised walk records.
//!
//! A walk of `l` steps becomes `l + 1` positions. Position `s` carries the
//! anonymous id of node `v_s`, the anonymous id of the relation used to
//! reach it, the traversal direction and two query flags. Anonymous ids are
//! handed out densely in order of first appearance, separately for nodes
//! (from 0) and relations (the "no relation" marker at position 0 is id 0,
//! real relations count from 1). A relation and its inverse share one id.
//!
//! The record is a pure function of the walk's equality pattern and the
//! query, so relabelling a graph leaves it unchanged. States are looked up
//! separately by [`record_states`].

use std::fmt::Write as _;

use crate::error::{contract, Result};
use crate::kg::{Direction, Isomorphism, Query};
use crate::nn::Tensor;
use crate::walk::Walk;

pub const DIR_FORWARD: u8 = 0;
pub const DIR_INVERSE: u8 = 1;
/// Direction slot of position 0, which has no incoming edge.
pub const DIR_NONE: u8 = 2;
pub const NUM_DIRECTIONS: usize = 3;

/// How node and relation ids are written into a record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecordingScheme {
    /// Order-of-discovery ids; invariant under relabelling.
    #[default]
    Anonymous,
    /// Raw graph ids folded into the table range. Deliberately breaks
    /// invariance; only used to check that the test harness notices.
    RawIds,
}

/// One position of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StepRecord {
    pub node_id: u32,
    pub rel_id: u32,
    pub direction: u8,
    pub is_query_head: bool,
    pub is_query_rel: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub steps: Vec<StepRecord>,
}

fn dir_code(d: Direction) -> u8 {
    match d {
        Direction::Forward => DIR_FORWARD,
        Direction::Inverse => DIR_INVERSE,
    }
}

fn first_seen(seen: &mut Vec<usize>, x: usize) -> u32 {
    match seen.iter().position(|&y| y == x) {
        Some(i) => i as u32,
        None => {
            seen.push(x);
            (seen.len() - 1) as u32
        }
    }
}

/// Records a walk under the anonymous scheme.
pub fn record(walk: &Walk, q: &Query) -> Record {
    record_with(walk, q, RecordingScheme::Anonymous)
}

pub fn record_with(walk: &Walk, q: &Query, scheme: RecordingScheme) -> Record {
    let positions = walk.len() + 1;
    let mut nodes_seen = Vec::with_capacity(positions);
    let mut rels_seen = Vec::with_capacity(positions);
    let head_hit = |v: usize| v == q.head() || q.tail() == Some(v);
    let mut steps = Vec::with_capacity(positions);
    for s in 0..positions {
        let v = walk.node(s);
        let (rel, dir) = if s == 0 {
            (None, DIR_NONE)
        } else {
            let st = walk.steps[s - 1];
            (Some(st.rel), dir_code(st.dir))
        };
        let (node_id, rel_id) = match scheme {
            RecordingScheme::Anonymous => (
                first_seen(&mut nodes_seen, v),
                rel.map_or(0, |r| 1 + first_seen(&mut rels_seen, r)),
            ),
            RecordingScheme::RawIds => (
                (v % positions) as u32,
                rel.map_or(0, |r| (1 + r % (positions - 1).max(1)) as u32),
            ),
        };
        steps.push(StepRecord {
            node_id,
            rel_id,
            direction: dir,
            is_query_head: head_hit(v),
            is_query_rel: rel.is_some() && rel == q.rel(),
        });
    }
    Record { steps }
}

/// Node-state and relation-state rows for every position of a walk.
///
/// `v_states` has one row per entity; `r_states` has one row per relation
/// followed by the "no relation" row used at position 0.
pub fn record_states(walk: &Walk, v_states: &Tensor, r_states: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = v_states.cols();
    if r_states.cols() != d {
        return Err(contract("node and relation states differ in width"));
    }
    let null_row = r_states
        .rows()
        .checked_sub(1)
        .ok_or_else(|| contract("relation state table is empty"))?;
    let mut vs = Vec::with_capacity((walk.len() + 1) * d);
    let mut rs = Vec::with_capacity((walk.len() + 1) * d);
    for s in 0..=walk.len() {
        let v = walk.node(s);
        if v >= v_states.rows() {
            return Err(contract(format!("no state for entity {v}")));
        }
        vs.extend_from_slice(v_states.row(v));
        let r = if s == 0 { null_row } else { walk.steps[s - 1].rel };
        if r >= null_row && s > 0 {
            return Err(contract(format!("no state for relation {r}")));
        }
        rs.extend_from_slice(r_states.row(r));
    }
    let n = walk.len() + 1;
    Ok((Tensor::new(vec![n, d], vs)?, Tensor::new(vec![n, d], rs)?))
}

/// Whether a walk and its image under `mu` produce identical records.
pub fn anon_translate_check(walk: &Walk, mu: &Isomorphism, q: &Query) -> Result<bool> {
    let mu = Isomorphism::new(mu.node_map.clone(), mu.rel_map.clone())?;
    let touches = walk.nodes().all(|v| v < mu.node_map.len())
        && walk.steps.iter().all(|s| s.rel < mu.rel_map.len())
        && q.head() < mu.node_map.len();
    if !touches {
        return Err(contract("isomorphism does not cover the walk"));
    }
    let mapped = walk.map(&mu.node_map, &mu.rel_map);
    Ok(record(walk, q) == record(&mapped, &mu.apply_query(q)))
}

/// Arrow rendering, e.g. `0* -1-> 1 -2-> 2 <-1- 0`. `*` marks query
/// positions; a `!` after a relation marks the query relation.
pub fn format_record(rec: &Record) -> String {
    let mut out = String::new();
    for (s, st) in rec.steps.iter().enumerate() {
        if s > 0 {
            let flag = if st.is_query_rel { "!" } else { "" };
            let _ = match st.direction {
                DIR_INVERSE => write!(out, " <-{}{}- ", st.rel_id, flag),
                _ => write!(out, " -{}{}-> ", st.rel_id, flag),
            };
        }
        let _ = write!(out, "{}{}", st.node_id, if st.is_query_head { "*" } else { "" });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::Step;

    fn walk(start: usize, steps: &[(usize, Direction, usize)]) -> Walk {
        Walk {
            start,
            steps: steps.iter().map(|&(rel, dir, node)| Step { rel, dir, node }).collect(),
        }
    }

    #[test]
    fn cycle_example() {
        // v0 -r1-> v1 -r2-> v2 -r1^-1-> v0, with raw ids 7, 4, 9 and relations 3, 5.
        let w = walk(
            7,
            &[
                (3, Direction::Forward, 4),
                (5, Direction::Forward, 9),
                (3, Direction::Inverse, 7),
            ],
        );
        let rec = record(&w, &Query::entity(7, 5));
        let nodes: Vec<u32> = rec.steps.iter().map(|s| s.node_id).collect();
        let rels: Vec<u32> = rec.steps.iter().map(|s| s.rel_id).collect();
        let dirs: Vec<u8> = rec.steps.iter().map(|s| s.direction).collect();
        assert_eq!(nodes, vec![0, 1, 2, 0]);
        assert_eq!(rels, vec![0, 1, 2, 1]);
        assert_eq!(dirs, vec![DIR_NONE, DIR_FORWARD, DIR_FORWARD, DIR_INVERSE]);
        assert_eq!(format_record(&rec), "0* -1-> 1 -2!-> 2 <-1- 0*");
    }

    #[test]
    fn fresh_walk_counts_up() {
        let w = walk(
            0,
            &[
                (0, Direction::Forward, 1),
                (0, Direction::Forward, 2),
                (0, Direction::Forward, 3),
            ],
        );
        let ids: Vec<u32> = record(&w, &Query::entity(9, 1))
            .steps
            .iter()
            .map(|s| s.node_id)
            .collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn query_flags() {
        let w = walk(2, &[(1, Direction::Forward, 3), (0, Direction::Forward, 4)]);
        let rec = record(&w, &Query::entity(2, 1));
        assert!(rec.steps[0].is_query_head && !rec.steps[1].is_query_head);
        assert!(!rec.steps[0].is_query_rel && rec.steps[1].is_query_rel && !rec.steps[2].is_query_rel);
        // Inverse traversal of the query relation also counts.
        let w = walk(3, &[(1, Direction::Inverse, 2)]);
        assert!(record(&w, &Query::entity(2, 1)).steps[1].is_query_rel);
        // Relation queries flag both endpoints and never a relation.
        let w = walk(2, &[(1, Direction::Forward, 3), (0, Direction::Forward, 4)]);
        let rec = record(&w, &Query::Relation { head: 2, tail: 4 });
        let heads: Vec<bool> = rec.steps.iter().map(|s| s.is_query_head).collect();
        assert_eq!(heads, vec![true, false, true]);
        assert!(rec.steps.iter().all(|s| !s.is_query_rel));
    }

    #[test]
    fn states_follow_the_walk() {
        let w = walk(1, &[(0, Direction::Forward, 0)]);
        let v = Tensor::from_rows(&[&[1.0], &[2.0]]);
        let r = Tensor::from_rows(&[&[5.0], &[-1.0]]);
        let (vs, rs) = record_states(&w, &v, &r).unwrap();
        assert_eq!(vs.data(), &[2.0, 1.0]);
        assert_eq!(rs.data(), &[-1.0, 5.0]);
        let short = Tensor::from_rows(&[&[1.0]]);
        assert!(record_states(&w, &short, &r).is_err());
    }

    #[test]
    fn translate_check_examples() {
        let w = walk(0, &[(0, Direction::Forward, 1), (1, Direction::Inverse, 2)]);
        let q = Query::entity(0, 1);
        assert!(anon_translate_check(&w, &Isomorphism::identity(3, 2), &q).unwrap());
        let swap = Isomorphism::new(vec![1, 0, 2], vec![1, 0]).unwrap();
        assert!(anon_translate_check(&w, &swap, &q).unwrap());
        let broken = Isomorphism {
            node_map: vec![0, 0, 2],
            rel_map: vec![0, 1],
        };
        assert!(anon_translate_check(&w, &broken, &q).is_err());
    }

    #[test]
    fn raw_ids_break_invariance() {
        let w = walk(0, &[(0, Direction::Forward, 1)]);
        let q = Query::entity(0, 0);
        let swap = [1, 0];
        let a = record_with(&w, &q, RecordingScheme::RawIds);
        let b = record_with(&w.map(&swap, &[0]), &q, RecordingScheme::RawIds);
        assert_ne!(a, b);
    }
}
