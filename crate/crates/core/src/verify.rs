//! Invariance harness, gradient suite and scaling probe.

use std::time::Instant;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{contract, FlockError, Result};
use crate::kg::{apply_isomorphism, Isomorphism, KnowledgeGraph, Query, Triple};
use crate::model::{BatchIndex, Flock, ModelConfig, Proposals};
use crate::nn::gradcheck::{gradient_check, param_gradient_check};
use crate::nn::layers::{BiGru, Gru, Linear, Mlp2, RmsNorm, SwiGlu};
use crate::nn::{Graph, ParamStore, Tensor, Var, NO_GROUP};
use crate::record::{format_record, record_with, RecordingScheme};
use crate::rng::{derive, rng_for, tag, FlockRng};
use crate::train::{example_loss, Example};
use crate::walk::{GraphView, Scenario, Walk, WalkBatch};

/// Walk tuples enumerated per distributional case at most.
pub const TUPLE_BUDGET: usize = 200_000;

/// Uniformly random entity and relation permutations.
pub fn random_isomorphism(g: &KnowledgeGraph, rng: &mut impl Rng) -> Isomorphism {
    let mut nodes: Vec<usize> = (0..g.num_entities()).collect();
    let mut rels: Vec<usize> = (0..g.num_relations()).collect();
    nodes.shuffle(rng);
    rels.shuffle(rng);
    Isomorphism {
        node_map: nodes,
        rel_map: rels,
    }
}

#[derive(Clone, Debug)]
pub struct InvarianceCase {
    pub graph: KnowledgeGraph,
    pub query: Query,
    pub mu: Isomorphism,
    pub walk_length: usize,
}

impl InvarianceCase {
    /// Random case with at most `max_nodes` nodes. The query asks for the
    /// tail of an existing triple so that every walk scenario is live.
    pub fn random(seed: u64, max_nodes: usize, max_len: usize) -> Result<Self> {
        let mut rng = rng_for(seed, &[tag::VERIFY]);
        let n = rng.gen_range(3..=max_nodes.max(3));
        let nr = rng.gen_range(1..=3);
        let m = rng.gen_range(n..=2 * n);
        let mut triples: Vec<Triple> = (0..m)
            .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..nr), rng.gen_range(0..n)))
            .collect();
        // Keep every node attached and every relation used.
        for v in 1..n {
            triples.push(Triple::new(rng.gen_range(0..v), v % nr, v));
        }
        triples.sort();
        triples.dedup();
        let graph = KnowledgeGraph::from_triples(n, nr, triples)?;
        let t = graph.triples()[rng.gen_range(0..graph.num_triples())];
        let query = if rng.gen_bool(0.5) {
            Query::entity(t.head, t.rel)
        } else {
            Query::Entity {
                head: t.tail,
                rel: t.rel,
                inverse: true,
            }
        };
        let mu = random_isomorphism(&graph, &mut rng);
        Ok(Self {
            graph,
            query,
            mu,
            walk_length: rng.gen_range(1..=max_len.max(1)),
        })
    }

    pub fn image(&self) -> Result<(KnowledgeGraph, Query)> {
        Ok((
            apply_isomorphism(&self.graph, &self.mu)?,
            self.mu.apply_query(&self.query),
        ))
    }
}

/// Outcome of a deterministic check; `witness` describes the first mismatch.
#[derive(Clone, Debug, Default)]
pub struct InvarianceReport {
    pub walks_checked: usize,
    pub witness: Option<String>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.witness.is_none()
    }
}

fn small_model(scheme: RecordingScheme, walk_length: usize, seed: u64) -> Result<Flock> {
    Flock::new(
        ModelConfig {
            heads: 2,
            head_dim: 3,
            update_steps: 1,
            walk_length,
            base_walks: 1,
            ensemble: 1,
            scheme,
            init_std: 1.0,
            ..Default::default()
        },
        seed,
    )
}

/// Every enumerable walk keeps its record and probability under `mu`, and
/// pooling fixed proposals commutes with `mu` bit for bit.
pub fn check_deterministic_invariance(case: &InvarianceCase, scheme: RecordingScheme) -> Result<InvarianceReport> {
    let (h, hq) = case.image()?;
    let (gv, hv) = (GraphView::new(&case.graph), GraphView::new(&h));
    let mu = &case.mu;
    let mut report = InvarianceReport::default();
    let mut all_walks = Vec::new();
    for &sc in Scenario::for_query(&case.query) {
        let dg = gv.enumerate_walk_distribution(&case.query, sc, case.walk_length, TUPLE_BUDGET)?;
        let dh = hv.enumerate_walk_distribution(&hq, sc, case.walk_length, TUPLE_BUDGET)?;
        if dg.len() != dh.len() {
            report.witness = Some(format!("{sc:?}: {} walks on G but {} on the image", dg.len(), dh.len()));
            return Ok(report);
        }
        for (w, p) in &dg {
            report.walks_checked += 1;
            let wm = w.map(&mu.node_map, &mu.rel_map);
            let (a, b) = (record_with(w, &case.query, scheme), record_with(&wm, &hq, scheme));
            if a != b {
                report.witness = Some(format!(
                    "walk {:?} records as {} but its image as {}",
                    w.nodes().collect::<Vec<_>>(),
                    format_record(&a),
                    format_record(&b)
                ));
                return Ok(report);
            }
            if dh.get(&wm) != Some(p) {
                report.witness = Some(format!(
                    "walk {:?} changes probability under relabelling",
                    w.nodes().collect::<Vec<_>>()
                ));
                return Ok(report);
            }
            all_walks.push(w.clone());
        }
    }
    // Pool random proposals over a batch of enumerated walks.
    let mut rng = rng_for(
        derive(case.walk_length as u64, &[case.graph.num_triples() as u64]),
        &[tag::VERIFY, 1],
    );
    all_walks.shuffle(&mut rng);
    all_walks.truncate(16);
    let batch = WalkBatch {
        scenarios: vec![Scenario::Random; all_walks.len()],
        walks: all_walks,
    };
    let mapped = WalkBatch {
        walks: batch.walks.iter().map(|w| w.map(&mu.node_map, &mu.rel_map)).collect(),
        scenarios: batch.scenarios.clone(),
    };
    let model = small_model(scheme, case.walk_length, 0)?;
    let (ne, nr) = (case.graph.num_entities(), case.graph.num_relations());
    let d = model.config.dim();
    let heads = model.config.heads;
    let rows = batch.walks.len() * (case.walk_length + 1);
    let mut random = |cols: usize| -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(vec![rows, cols], data).expect("shape")
    };
    let (dv, dr, a, b) = (random(d), random(d), random(heads), random(heads));
    let pool = |kg_batch: &WalkBatch, q: &Query| -> Result<(Tensor, Tensor)> {
        let idx = BatchIndex::build(kg_batch, q, nr, scheme)?;
        let mut g = Graph::new();
        let props = Proposals {
            dv: g.input(dv.clone()),
            dr: g.input(dr.clone()),
            a: g.input(a.clone()),
            b: g.input(b.clone()),
        };
        let (pv, pr) = model.consensus(&mut g, &props, &idx, ne, nr)?;
        Ok((g.value(pv).clone(), g.value(pr).clone()))
    };
    let (pv, pr) = pool(&batch, &case.query)?;
    let (qv, qr) = pool(&mapped, &hq)?;
    for v in 0..ne {
        if pv.row(v) != qv.row(mu.node_map[v]) {
            report.witness = Some(format!("pooled update of entity {v} differs from its image"));
            return Ok(report);
        }
    }
    for r in 0..nr {
        if pr.row(r) != qr.row(mu.rel_map[r]) {
            report.witness = Some(format!("pooled update of relation {r} differs from its image"));
            return Ok(report);
        }
    }
    Ok(report)
}

/// Exact expected scores of a one-step, one-walk-per-scenario model:
/// the sum over all walk tuples of tuple probability times network output.
pub fn expected_scores(model: &Flock, graph: &KnowledgeGraph, q: &Query) -> Result<Vec<f64>> {
    let cfg = &model.config;
    if cfg.update_steps != 1 || cfg.base_walks != 1 {
        return Err(contract(
            "exact expectation needs one update step and one walk per scenario",
        ));
    }
    let view = GraphView::new(graph);
    let scenarios = Scenario::for_query(q);
    let mut dists: Vec<Vec<(Walk, f64)>> = Vec::new();
    let mut tuples = 1usize;
    for &sc in scenarios {
        let d = view.enumerate_walk_distribution(q, sc, cfg.walk_length, TUPLE_BUDGET)?;
        tuples = tuples.saturating_mul(d.len());
        let dist = d
            .into_iter()
            .map(|(w, p)| (w, p.to_f64().unwrap_or(f64::NAN)))
            .collect();
        dists.push(dist);
    }
    if tuples > TUPLE_BUDGET {
        return Err(FlockError::Budget(format!(
            "{tuples} walk tuples exceed {TUPLE_BUDGET}"
        )));
    }
    let width = match q {
        Query::Relation { .. } => graph.num_relations(),
        Query::Entity { .. } => graph.num_entities(),
    };
    let mut acc = vec![0.0; width];
    let mut idx = vec![0usize; dists.len()];
    loop {
        let mut p = 1.0;
        let mut walks = Vec::with_capacity(dists.len());
        for (k, &i) in idx.iter().enumerate() {
            p *= dists[k][i].1;
            walks.push(dists[k][i].0.clone());
        }
        let batch = WalkBatch {
            walks,
            scenarios: scenarios.to_vec(),
        };
        let mut g = Graph::with_params(&model.params);
        let out = model.forward_with_walks(&mut g, &view, q, &[batch])?;
        for (a, s) in acc.iter_mut().zip(g.value(out.scores).data()) {
            *a += p * s;
        }
        // Odometer over the tuple index.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(acc);
            }
            idx[k] += 1;
            if idx[k] < dists[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `max_x |E[score_G(x)] - E[score_H(mu(x))]|` for a fresh small model.
pub fn check_distributional_invariance(case: &InvarianceCase, scheme: RecordingScheme, param_seed: u64) -> Result<f64> {
    let model = small_model(scheme, case.walk_length, param_seed)?;
    let (h, hq) = case.image()?;
    let eg = expected_scores(&model, &case.graph, &case.query)?;
    let eh = expected_scores(&model, &h, &hq)?;
    Ok(eg
        .iter()
        .enumerate()
        .map(|(x, s)| (s - eh[case.mu.node_map[x]]).abs())
        .fold(0.0, f64::max))
}

/// The case the raw-id mutant is checked on: a path with a pendant edge,
/// relabelled by a fixed non-trivial permutation.
pub fn asymmetric_case() -> Result<InvarianceCase> {
    let t = [(0, 0, 1), (1, 1, 2), (2, 0, 3), (1, 0, 3)];
    let graph = KnowledgeGraph::from_triples(4, 2, t.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect())?;
    Ok(InvarianceCase {
        graph,
        query: Query::entity(0, 0),
        mu: Isomorphism::new(vec![2, 0, 3, 1], vec![1, 0])?,
        walk_length: 2,
    })
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn rand_tensor(rng: &mut FlockRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct gradient.
fn probe(g: &mut Graph<'_>, x: Var, seed: u64) -> Result<Var> {
    let t = g.value(x);
    let mut rng = rng_for(seed, &[tag::VERIFY, 2]);
    let w: Vec<f64> = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = g.mul_const(x, &w)?;
    Ok(g.sum(y))
}

/// Finite-difference checks of every tape operation, every layer and the
/// full training loss. Ops and layers use tolerance `1e-6`, the end-to-end
/// loss `1e-4`.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    const H: f64 = 1e-5;
    const LAYER_TOL: f64 = 1e-6;
    let mut rng = rng_for(seed, &[tag::VERIFY, 3]);
    let mut out = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph<'_>, &[Var]) -> Result<Var>| -> Result<()> {
        let err = gradient_check(&inputs, H, |g, v| {
            let y = f(g, v)?;
            probe(g, y, 11)
        })?;
        out.push(GradReport {
            name: name.to_string(),
            error: err,
            tolerance: LAYER_TOL,
        });
        Ok(())
    };
    let r = &mut rng;
    let (a34, b34, c45) = (
        rand_tensor(r, 3, 4, -1.0, 1.0),
        rand_tensor(r, 3, 4, -1.0, 1.0),
        rand_tensor(r, 4, 5, -1.0, 1.0),
    );
    let row4 = rand_tensor(r, 1, 4, -1.0, 1.0);
    let pos = rand_tensor(r, 3, 4, 0.2, 2.0);
    op("matmul", vec![a34.clone(), c45.clone()], &|g, v| g.matmul(v[0], v[1]))?;
    op("add", vec![a34.clone(), b34.clone()], &|g, v| g.add(v[0], v[1]))?;
    op("sub", vec![a34.clone(), b34.clone()], &|g, v| g.sub(v[0], v[1]))?;
    op("mul", vec![a34.clone(), b34.clone()], &|g, v| g.mul(v[0], v[1]))?;
    op("add_row", vec![a34.clone(), row4.clone()], &|g, v| {
        g.add_row(v[0], v[1])
    })?;
    op("scale", vec![a34.clone()], &|g, v| Ok(g.scale(v[0], -1.7)))?;
    op("affine", vec![a34.clone()], &|g, v| Ok(g.affine(v[0], 0.3, 2.0)))?;
    op("mul_const", vec![a34.clone()], &|g, v| g.mul_const(v[0], &[0.5; 12]))?;
    op("sigmoid", vec![a34.clone()], &|g, v| Ok(g.sigmoid(v[0])))?;
    op("tanh", vec![a34.clone()], &|g, v| Ok(g.tanh(v[0])))?;
    op("swish", vec![a34.clone()], &|g, v| Ok(g.swish(v[0])))?;
    op("log", vec![pos.clone()], &|g, v| Ok(g.log(v[0])))?;
    op("exp", vec![a34.clone()], &|g, v| Ok(g.exp(v[0])))?;
    op("clamp", vec![a34.clone()], &|g, v| Ok(g.clamp(v[0], -0.93, 0.91)))?;
    op("softmax_rows", vec![a34.clone()], &|g, v| g.softmax(v[0], 1))?;
    op("softmax_cols", vec![a34.clone()], &|g, v| g.softmax(v[0], 0))?;
    op("concat", vec![a34.clone(), b34.clone()], &|g, v| {
        g.concat(&[v[0], v[1]], 1)
    })?;
    op("slice", vec![a34.clone()], &|g, v| g.slice(v[0], 1, 1, 3))?;
    op("sum", vec![a34.clone()], &|g, v| Ok(g.sum(v[0])))?;
    op("mean", vec![a34.clone()], &|g, v| Ok(g.mean(v[0])))?;
    op("gather_rows", vec![a34.clone()], &|g, v| {
        g.gather_rows(v[0], vec![2, 0, 2, 1].into())
    })?;
    op("broadcast_rows", vec![row4.clone()], &|g, v| {
        Ok(g.broadcast_rows(v[0], 3))
    })?;
    op("rms_norm", vec![a34.clone(), row4.clone()], &|g, v| {
        g.rms_norm(v[0], v[1], 1e-6)
    })?;
    let (steps, batch, d) = (3, 2, 2);
    let xw = rand_tensor(r, steps * batch, 3 * d, -1.0, 1.0);
    let uzr = rand_tensor(r, d, 2 * d, -1.0, 1.0);
    let un = rand_tensor(r, d, d, -1.0, 1.0);
    let h0 = rand_tensor(r, batch, d, -1.0, 1.0);
    for reverse in [false, true] {
        let name = if reverse { "gru_scan_reverse" } else { "gru_scan" };
        op(name, vec![xw.clone(), uzr.clone(), un.clone(), h0.clone()], &|g, v| {
            g.gru_scan(v[0], v[1], v[2], Some(v[3]), steps, batch, reverse)
        })?;
    }
    let values = rand_tensor(r, 6, 4, -1.0, 1.0);
    let logits = rand_tensor(r, 6, 2, -2.0, 2.0);
    op("grouped_softmax_pool", vec![values, logits], &|g, v| {
        g.grouped_softmax_pool(
            v[0],
            v[1],
            vec![1, 0, 1, NO_GROUP, 2, 1].into(),
            4,
            2,
            Some(vec![5, 4, 3, 2, 1, 0].into()),
        )
    })?;

    let x = rand_tensor(&mut rng, 6, 4, -1.0, 1.0);
    for name in [
        "linear",
        "rms_norm_layer",
        "swiglu",
        "mlp2",
        "gru",
        "gru_reverse",
        "bigru",
    ] {
        let mut store = ParamStore::new();
        let mut lrng = rng_for(seed, &[tag::VERIFY, 4]);
        let layer = TestLayer::build(name, &mut store, &mut lrng)?;
        // Perturb the input like a parameter so one check covers both.
        let xid = store.add("input", x.clone())?;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        let checks = param_gradient_check(&store, &ids, H, 64, |g| {
            let xi = g.param(xid);
            let y = layer.forward(g, xi)?;
            probe(g, y, 12)
        })?;
        out.push(GradReport {
            name: name.to_string(),
            error: checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max),
            tolerance: LAYER_TOL,
        });
    }
    out.push(GradReport {
        name: "end_to_end_loss".to_string(),
        error: end_to_end_gradient_error(seed, 16)?,
        tolerance: 1e-4,
    });
    Ok(out)
}

enum TestLayer {
    Linear(Linear),
    Norm(RmsNorm),
    Ffn(SwiGlu),
    Mlp(Mlp2),
    Gru(Gru, bool),
    BiGru(BiGru),
}

impl TestLayer {
    /// Layer over 4 input features; sequences are 3 steps of 2 walks.
    fn build(name: &str, s: &mut ParamStore, r: &mut FlockRng) -> Result<Self> {
        Ok(match name {
            "linear" => TestLayer::Linear(Linear::new(s, name, 4, 3, true, r)?),
            "rms_norm_layer" => TestLayer::Norm(RmsNorm::new(s, name, 4, 1e-6)?),
            "swiglu" => TestLayer::Ffn(SwiGlu::new(s, name, 4, 6, r)?),
            "mlp2" => TestLayer::Mlp(Mlp2::new(s, name, 4, 5, 2, r)?),
            "gru" => TestLayer::Gru(Gru::new(s, name, 4, 3, r)?, false),
            "gru_reverse" => TestLayer::Gru(Gru::new(s, name, 4, 3, r)?, true),
            "bigru" => TestLayer::BiGru(BiGru::new(s, name, 4, 4, r)?),
            _ => return Err(contract(format!("no test layer {name}"))),
        })
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self {
            TestLayer::Linear(l) => l.forward(g, x),
            TestLayer::Norm(l) => l.forward(g, x),
            TestLayer::Ffn(l) => l.forward(g, x),
            TestLayer::Mlp(l) => l.forward(g, x),
            TestLayer::Gru(l, rev) => l.forward(g, x, 3, 2, *rev, None),
            TestLayer::BiGru(l) => l.forward(g, x, 3, 2),
        }
    }
}

/// Largest relative finite-difference error of the full training loss of
/// a two-step model over one fixed set of length-4 walks, checking up to
/// `coords` coordinates per parameter. Gradients flow through the
/// adversarial weights so the loss is differentiated exactly.
pub fn end_to_end_gradient_error(seed: u64, coords: usize) -> Result<f64> {
    let t = [
        (0, 0, 1),
        (1, 1, 2),
        (2, 0, 3),
        (3, 1, 4),
        (4, 0, 0),
        (1, 0, 3),
        (2, 1, 4),
    ];
    let graph = KnowledgeGraph::from_triples(5, 2, t.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect())?;
    let model = Flock::new(
        ModelConfig {
            heads: 2,
            head_dim: 2,
            update_steps: 2,
            walk_length: 4,
            base_walks: 1,
            ensemble: 1,
            init_std: 0.5,
            ..Default::default()
        },
        seed,
    )?;
    let view = GraphView::new(&graph);
    let ex = Example {
        view,
        query: Query::entity(0, 0),
        positive: 1,
        negatives: vec![2, 3, 4],
    };
    let batches = model.sample_batches(&view, &ex.query, derive(seed, &[tag::VERIFY, 5]))?;
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    let checks = param_gradient_check(&model.params, &ids, 1e-5, coords, |g| {
        let out = model.forward_with_walks(g, &view, &ex.query, &batches)?;
        example_loss(g, out.scores, &ex, 1.0, false)
    })?;
    Ok(checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub struct ScalingRow {
    pub walks: usize,
    pub walk_length: usize,
    pub passes: usize,
    pub seconds: f64,
}

/// Which knob a row of the probe doubles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Knob {
    Walks,
    Length,
    Passes,
}

#[derive(Clone, Debug)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    /// `(knob, from row, to row, time ratio)` for every doubling.
    pub ratios: Vec<(Knob, usize, usize, f64)>,
}

/// Times ensembled prediction while doubling the walk count, the walk
/// length and the pass count `doublings` times each, starting from
/// `(n, l, p)`.
///
/// Every repetition walks each knob's chain base, x2, x4, ... back to
/// back, so a doubling is always timed right after the row it is compared
/// with. A ratio is the median over `runs` of these paired ratios and a
/// row's time is the median of its timings. Machine speed on shared hosts
/// drifts over seconds; pairing keeps that drift out of the ratios.
#[allow(clippy::too_many_arguments)]
pub fn scaling_probe(
    base: &ModelConfig,
    graph: &KnowledgeGraph,
    q: &Query,
    n: usize,
    l: usize,
    p: usize,
    doublings: usize,
    runs: usize,
) -> Result<ScalingResult> {
    let view = GraphView::new(graph);
    let mut grid = vec![(Knob::Walks, n, l, p)];
    for knob in [Knob::Walks, Knob::Length, Knob::Passes] {
        for k in 1..=doublings {
            let f = 1 << k;
            grid.push(match knob {
                Knob::Walks => (knob, n * f, l, p),
                Knob::Length => (knob, n, l * f, p),
                Knob::Passes => (knob, n, l, p * f),
            });
        }
    }
    let models = grid
        .iter()
        .map(|&(_, walks, len, _)| {
            Flock::new(
                ModelConfig {
                    base_walks: walks,
                    walk_length: len,
                    ..base.clone()
                },
                0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for (m, &(_, _, _, passes)) in models.iter().zip(&grid) {
        m.predict(&view, q, passes, 1)?;
    }
    let time = |i: usize| -> Result<f64> {
        let t0 = Instant::now();
        models[i].predict(&view, q, grid[i].3, 2)?;
        Ok(t0.elapsed().as_secs_f64())
    };
    for i in 0..grid.len() {
        time(i)?;
    }
    let chains: Vec<Vec<usize>> = (0..3)
        .map(|c| {
            std::iter::once(0)
                .chain((1..=doublings).map(|k| c * doublings + k))
                .collect()
        })
        .collect();
    let mut times = vec![Vec::new(); grid.len()];
    let mut paired = vec![Vec::new(); grid.len()];
    for _ in 0..runs.max(1) {
        for chain in &chains {
            let mut prev = time(0)?;
            times[0].push(prev);
            for &i in &chain[1..] {
                let t = time(i)?;
                times[i].push(t);
                paired[i].push(t / prev);
                prev = t;
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let rows: Vec<ScalingRow> = grid
        .iter()
        .zip(&mut times)
        .map(|(&(_, walks, walk_length, passes), t)| ScalingRow {
            walks,
            walk_length,
            passes,
            seconds: median(t),
        })
        .collect();
    let mut ratios = Vec::new();
    for chain in &chains {
        for w in chain.windows(2) {
            ratios.push((grid[w[1]].0, w[0], w[1], median(&mut paired[w[1]])));
        }
    }
    Ok(ScalingResult { rows, ratios })
}

/// Outcome of one `flock verify` suite: human-readable lines and a verdict.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub lines: Vec<String>,
    pub passed: bool,
}

impl Default for SuiteReport {
    fn default() -> Self {
        Self::new()
    }
}

impl SuiteReport {
    pub fn new() -> Self {
        Self {
            lines: Vec::new(),
            passed: true,
        }
    }

    pub(crate) fn check(&mut self, ok: bool, line: String) {
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
        self.passed &= ok;
    }

    pub(crate) fn note(&mut self, line: String) {
        self.lines.push(format!("     {line}"));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Invariance,
    Gradients,
    Scaling,
    PetalsStructure,
}

impl std::str::FromStr for Suite {
    type Err = FlockError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariance" => Ok(Suite::Invariance),
            "gradients" => Ok(Suite::Gradients),
            "scaling" => Ok(Suite::Scaling),
            "petals-structure" => Ok(Suite::PetalsStructure),
            _ => Err(FlockError::Config(format!("unknown suite {s:?}"))),
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Invariance => invariance_suite(seed, 100, 20),
        Suite::Gradients => gradient_report(seed),
        Suite::Scaling => scaling_suite(seed),
        Suite::PetalsStructure => crate::petals::structure_suite(seed),
    }
}

/// Chi-square test of `draws` random isomorphisms of a 4-node graph against
/// the uniform law over its 24 node permutations. Returns the p-value and
/// the largest deviation of an empirical frequency from 1/24.
pub fn isomorphism_uniformity(seed: u64, draws: usize) -> Result<(f64, f64)> {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let g = KnowledgeGraph::from_triples(
        4,
        1,
        vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)],
    )?;
    let mut rng = rng_for(seed, &[tag::VERIFY, 6]);
    let mut counts = std::collections::HashMap::new();
    for _ in 0..draws {
        *counts
            .entry(random_isomorphism(&g, &mut rng).node_map)
            .or_insert(0usize) += 1;
    }
    let expected = draws as f64 / 24.0;
    let mut stat = 0.0;
    let mut dev: f64 = 0.0;
    for perm in permutations(4) {
        let c = counts.get(&perm).copied().unwrap_or(0) as f64;
        stat += (c - expected).powi(2) / expected;
        dev = dev.max((c / draws as f64 - 1.0 / 24.0).abs());
    }
    if counts.len() > 24 {
        return Err(contract("random isomorphism produced a non-permutation"));
    }
    let chi = ChiSquared::new(23.0).map_err(|e| contract(e.to_string()))?;
    Ok((1.0 - chi.cdf(stat), dev))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    crate::petals::for_each_permutation(n, &mut |p| {
        out.push(p.to_vec());
        false
    });
    out
}

#[derive(Clone, Debug, Default)]
pub struct DeterministicSummary {
    pub walks: usize,
    pub failures: Vec<String>,
}

/// Deterministic checks on `count` random cases of at most 8 nodes and walk
/// length at most 4.
pub fn deterministic_cases(seed: u64, count: usize) -> Result<DeterministicSummary> {
    let mut out = DeterministicSummary::default();
    for i in 0..count {
        let case = InvarianceCase::random(derive(seed, &[tag::VERIFY, 10, i as u64]), 8, 4)?;
        let r = check_deterministic_invariance(&case, RecordingScheme::Anonymous)?;
        out.walks += r.walks_checked;
        if let Some(w) = r.witness {
            out.failures.push(format!("case {i}: {w}"));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct DistributionalSummary {
    pub checked: usize,
    /// Cases whose walk tuples exceed [`TUPLE_BUDGET`], with the reason.
    pub skipped: Vec<String>,
    /// Largest expected-score discrepancy over the checked cases.
    pub worst: f64,
}

/// Exact expectation checks on `count` random cases of at most 6 nodes and
/// walk length at most 3.
pub fn distributional_cases(seed: u64, count: usize) -> Result<DistributionalSummary> {
    let mut out = DistributionalSummary::default();
    for i in 0..count {
        let case = InvarianceCase::random(derive(seed, &[tag::VERIFY, 11, i as u64]), 6, 3)?;
        match check_distributional_invariance(
            &case,
            RecordingScheme::Anonymous,
            derive(seed, &[tag::VERIFY, 12, i as u64]),
        ) {
            Ok(d) => {
                out.worst = out.worst.max(d);
                out.checked += 1;
            }
            Err(FlockError::Budget(msg)) => out.skipped.push(format!("distributional case {i} skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Deterministic checks on `det_cases` random cases with at most 8 nodes,
/// exact expectation checks on `dist_cases` cases with at most 6 nodes, the
/// raw-id mutant on the asymmetric case and the uniformity of
/// [`random_isomorphism`].
pub fn invariance_suite(seed: u64, det_cases: usize, dist_cases: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new();
    let (p, dev) = isomorphism_uniformity(seed, 10_000)?;
    rep.check(
        p > 0.01 && dev <= 0.01,
        format!("random isomorphism uniform: p = {p:.3}, max deviation {dev:.4}"),
    );

    let t0 = Instant::now();
    let det = deterministic_cases(seed, det_cases)?;
    rep.check(
        det.failures.is_empty(),
        format!(
            "deterministic invariance: {det_cases} cases, {} walks, {:.1}s",
            det.walks,
            t0.elapsed().as_secs_f64()
        ),
    );
    for f in det.failures.iter().take(5) {
        rep.note(f.clone());
    }

    let t0 = Instant::now();
    let dist = distributional_cases(seed, dist_cases)?;
    for s in &dist.skipped {
        rep.note(s.clone());
    }
    rep.check(
        dist.worst < 1e-9 && dist.checked > 0,
        format!(
            "distributional invariance: {} cases, {} skipped, max |dE| = {:.2e}, {:.1}s",
            dist.checked,
            dist.skipped.len(),
            dist.worst,
            t0.elapsed().as_secs_f64()
        ),
    );

    let case = asymmetric_case()?;
    let det = check_deterministic_invariance(&case, RecordingScheme::RawIds)?;
    rep.check(!det.passed(), "raw-id mutant caught by record comparison".into());
    let d = check_distributional_invariance(&case, RecordingScheme::RawIds, seed)?;
    rep.check(
        d > 0.01,
        format!("raw-id mutant caught by expectation: max |dE| = {d:.3}"),
    );
    Ok(rep)
}

pub fn gradient_report(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new();
    for r in gradient_suite(seed)? {
        rep.check(
            r.passed(),
            format!("{:<28} error {:.2e} (tolerance {:.0e})", r.name, r.error, r.tolerance),
        );
    }
    Ok(rep)
}

/// Time ratios for two doublings of the walk count, walk length and pass
/// count of a default-width model on a 30-node ring with chords; each must
/// lie in `[1.5, 2.5]`.
pub fn scaling_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new();
    let n = 30;
    let mut rng = rng_for(seed, &[tag::VERIFY, 7]);
    let mut triples: Vec<Triple> = (0..n).map(|v| Triple::new(v, v % 3, (v + 1) % n)).collect();
    for _ in 0..n {
        triples.push(Triple::new(
            rng.gen_range(0..n),
            rng.gen_range(0..3),
            rng.gen_range(0..n),
        ));
    }
    let graph = KnowledgeGraph::from_triples(n, 3, triples)?;
    let base = ModelConfig {
        update_steps: 2,
        ..Default::default()
    };
    let res = scaling_probe(&base, &graph, &Query::entity(0, 0), 32, 32, 2, 2, 5)?;
    for (i, r) in res.rows.iter().enumerate() {
        rep.note(format!(
            "row {i}: n = {}, l = {}, P = {}: {:.4}s",
            r.walks, r.walk_length, r.passes, r.seconds
        ));
    }
    for (knob, from, to, ratio) in &res.ratios {
        rep.check(
            (1.5..=2.5).contains(ratio),
            format!("{knob:?} doubling row {from} -> {to}: time ratio {ratio:.2}"),
        );
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        for r in gradient_suite(1).unwrap() {
            assert!(r.passed(), "{} {:e}", r.name, r.error);
        }
    }

    #[test]
    fn identity_and_random_relabelling_pass() {
        let mut case = InvarianceCase::random(3, 6, 3).unwrap();
        let id = Isomorphism::identity(case.graph.num_entities(), case.graph.num_relations());
        let mu = std::mem::replace(&mut case.mu, id);
        assert!(check_deterministic_invariance(&case, RecordingScheme::Anonymous)
            .unwrap()
            .passed());
        assert_eq!(
            check_distributional_invariance(&case, RecordingScheme::Anonymous, 1).unwrap_or(0.0),
            0.0
        );
        case.mu = mu;
        let rep = check_deterministic_invariance(&case, RecordingScheme::Anonymous).unwrap();
        assert!(rep.passed(), "{:?}", rep.witness);
        assert!(rep.walks_checked > 0);
    }

    #[test]
    fn raw_ids_are_caught() {
        let case = asymmetric_case().unwrap();
        let rep = check_deterministic_invariance(&case, RecordingScheme::RawIds).unwrap();
        assert!(!rep.passed());
        let d = check_distributional_invariance(&case, RecordingScheme::RawIds, 0).unwrap();
        assert!(d > 0.01, "{d}");
        let d = check_distributional_invariance(&case, RecordingScheme::Anonymous, 0).unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn single_node_isomorphism_is_identity() {
        let g = KnowledgeGraph::from_triples(1, 1, vec![Triple::new(0, 0, 0)]).unwrap();
        let mu = random_isomorphism(&g, &mut rng_for(0, &[]));
        assert_eq!(mu.node_map, vec![0]);
    }
}
