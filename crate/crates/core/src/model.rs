//! The walk-based link predictor.
//!
//! Each of the `I` update steps samples a batch of walks, records them,
//! encodes every position into a `d`-vector, runs a bidirectional GRU over
//! each walk and decodes per-position proposals `(dv, dr)` with confidences
//! `(a, b)`. Proposals are pooled per entity and per relation with a
//! multi-head softmax over confidences and added to the state tables. After
//! the last step a small MLP scores every candidate.
//!
//! Row layout inside a step: all walks are processed as one time-major
//! batch, so row `s * N + i` holds position `s` of walk `i`.

use std::rc::Rc;

use rand::SeedableRng;

use crate::error::{contract, FlockError, Result};
use crate::kg::Query;
use crate::nn::layers::{BiGru, Linear, Mlp2, RmsNorm, SwiGlu};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var, NO_GROUP};
use crate::record::{record_with, RecordingScheme, NUM_DIRECTIONS};
use crate::rng::{derive, tag, FlockRng};
use crate::walk::{GraphView, WalkBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Entity,
    Relation,
}

impl std::str::FromStr for Task {
    type Err = FlockError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(Task::Entity),
            "relation" => Ok(Task::Relation),
            other => Err(FlockError::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Entity => "entity",
            Task::Relation => "relation",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub heads: usize,
    pub head_dim: usize,
    pub update_steps: usize,
    pub walk_length: usize,
    pub base_walks: usize,
    pub ensemble: usize,
    /// Share one update network across all steps.
    pub tie_weights: bool,
    /// Sample one walk batch and reuse it in every update step.
    pub reuse_walks: bool,
    pub scheme: RecordingScheme,
    pub rms_eps: f64,
    pub init_std: f64,
    /// Entity and triple counts of the training graph (0 when unknown);
    /// used to adapt walk counts to other graphs.
    pub train_entities: f64,
    pub train_triples: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: Task::Entity,
            heads: 4,
            head_dim: 16,
            update_steps: 6,
            walk_length: 128,
            base_walks: 128,
            ensemble: 16,
            tie_weights: false,
            reuse_walks: false,
            scheme: RecordingScheme::Anonymous,
            rms_eps: 1e-6,
            init_std: 0.1,
            train_entities: 0.0,
            train_triples: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("update_steps", self.update_steps),
            ("walk_length", self.walk_length),
            ("base_walks", self.base_walks),
            ("ensemble", self.ensemble),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FlockError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameters of one update step.
#[derive(Clone, Debug)]
pub struct UpdateNet {
    pub anon_node: ParamId,
    pub anon_rel: ParamId,
    pub direction: ParamId,
    pub head_flag: ParamId,
    pub rel_flag: ParamId,
    pub v_proj: ParamId,
    pub r_proj: ParamId,
    pub norm: RmsNorm,
    pub gru: BiGru,
    pub ffn: SwiGlu,
    pub out: Linear,
}

impl UpdateNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut FlockRng) -> Result<Self> {
        let d = cfg.dim();
        let table = cfg.walk_length + 1;
        let std = cfg.init_std;
        Ok(Self {
            anon_node: store.add_normal(format!("{name}.anon_node"), &[table, d], std, rng)?,
            anon_rel: store.add_normal(format!("{name}.anon_rel"), &[table, d], std, rng)?,
            direction: store.add_normal(format!("{name}.direction"), &[NUM_DIRECTIONS, d], std, rng)?,
            head_flag: store.add_normal(format!("{name}.head_flag"), &[2, d], std, rng)?,
            rel_flag: store.add_normal(format!("{name}.rel_flag"), &[2, d], std, rng)?,
            v_proj: store.add_glorot(format!("{name}.v_proj"), d, d, 1.0, rng)?,
            r_proj: store.add_glorot(format!("{name}.r_proj"), d, d, 1.0, rng)?,
            norm: RmsNorm::new(store, &format!("{name}.norm"), d, cfg.rms_eps)?,
            gru: BiGru::new(store, &format!("{name}.gru"), d, d, rng)?,
            ffn: SwiGlu::new(store, &format!("{name}.ffn"), d, 2 * d, rng)?,
            out: Linear::new(store, &format!("{name}.out"), d, 2 * d + 2 * cfg.heads, true, rng)?,
        })
    }
}

/// Per-position integer features of a walk batch, in time-major row order.
#[derive(Clone, Debug)]
pub struct BatchIndex {
    pub num_walks: usize,
    pub positions: usize,
    pub anon_node: Rc<[usize]>,
    pub anon_rel: Rc<[usize]>,
    pub direction: Rc<[usize]>,
    pub head_flag: Rc<[usize]>,
    pub rel_flag: Rc<[usize]>,
    /// Entity visited at each row.
    pub entity: Rc<[usize]>,
    /// Row of the relation state table read at each row (the last row is
    /// the "no relation" state).
    pub rel_state: Rc<[usize]>,
    pub entity_group: Rc<[u32]>,
    pub rel_group: Rc<[u32]>,
    /// Rows in (walk, position) order.
    pub canonical_order: Rc<[usize]>,
}

impl BatchIndex {
    pub fn build(batch: &WalkBatch, q: &Query, num_relations: usize, scheme: RecordingScheme) -> Result<Self> {
        let n = batch.walks.len();
        let l = batch.walks.first().map_or(0, |w| w.len());
        if n == 0 || batch.walks.iter().any(|w| w.len() != l) {
            return Err(contract("walk batch must be non-empty with equal lengths"));
        }
        let p = l + 1;
        let rows = n * p;
        let mut anon_node = vec![0; rows];
        let mut anon_rel = vec![0; rows];
        let mut direction = vec![0; rows];
        let mut head_flag = vec![0; rows];
        let mut rel_flag = vec![0; rows];
        let mut entity = vec![0; rows];
        let mut rel_state = vec![0; rows];
        let mut entity_group = vec![0u32; rows];
        let mut rel_group = vec![NO_GROUP; rows];
        let mut order = Vec::with_capacity(rows);
        for (i, walk) in batch.walks.iter().enumerate() {
            let rec = record_with(walk, q, scheme);
            for (s, st) in rec.steps.iter().enumerate() {
                let row = s * n + i;
                order.push(row);
                anon_node[row] = st.node_id as usize;
                anon_rel[row] = st.rel_id as usize;
                direction[row] = st.direction as usize;
                head_flag[row] = st.is_query_head as usize;
                rel_flag[row] = st.is_query_rel as usize;
                let v = walk.node(s);
                entity[row] = v;
                entity_group[row] = v as u32;
                if s == 0 {
                    rel_state[row] = num_relations;
                } else {
                    let r = walk.steps[s - 1].rel;
                    rel_state[row] = r;
                    rel_group[row] = r as u32;
                }
            }
        }
        Ok(Self {
            num_walks: n,
            positions: p,
            anon_node: anon_node.into(),
            anon_rel: anon_rel.into(),
            direction: direction.into(),
            head_flag: head_flag.into(),
            rel_flag: rel_flag.into(),
            entity: entity.into(),
            rel_state: rel_state.into(),
            entity_group: entity_group.into(),
            rel_group: rel_group.into(),
            canonical_order: order.into(),
        })
    }
}

/// Decoded per-row outputs of the sequence processor.
#[derive(Clone, Copy, Debug)]
pub struct Proposals {
    pub dv: Var,
    pub dr: Var,
    pub a: Var,
    pub b: Var,
}

/// State tables after the final update step, plus the scores.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub v_table: Var,
    pub r_table: Var,
    /// One column; a row per candidate entity or relation.
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Flock {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub v0: ParamId,
    pub r0: ParamId,
    pub r_null: ParamId,
    /// Added to the query relation state; row 1 for head-side (inverse)
    /// queries.
    pub query_dir: ParamId,
    pub steps: Vec<UpdateNet>,
    pub head: Mlp2,
}

impl Flock {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = FlockRng::seed_from_u64(derive(seed, &[tag::INIT]));
        let mut params = ParamStore::new();
        let d = config.dim();
        let std = config.init_std;
        let v0 = params.add_normal("v0", &[1, d], std, &mut rng)?;
        let r0 = params.add_normal("r0", &[1, d], std, &mut rng)?;
        let r_null = params.add_normal("r_null", &[1, d], std, &mut rng)?;
        let query_dir = params.add_normal("query_dir", &[2, d], std, &mut rng)?;
        let nets = if config.tie_weights { 1 } else { config.update_steps };
        let mut steps = Vec::with_capacity(nets);
        for i in 0..nets {
            steps.push(UpdateNet::new(&mut params, &format!("step{i}"), &config, &mut rng)?);
        }
        let head_in = match config.task {
            Task::Entity => d,
            Task::Relation => 3 * d,
        };
        let head = Mlp2::new(&mut params, "head", head_in, d, 1, &mut rng)?;
        Ok(Self {
            config,
            params,
            v0,
            r0,
            r_null,
            query_dir,
            steps,
            head,
        })
    }

    pub fn net(&self, step: usize) -> &UpdateNet {
        if self.config.tie_weights {
            &self.steps[0]
        } else {
            &self.steps[step]
        }
    }

    /// Initial state tables: every entity row is `v0`, every relation row
    /// is `r0`, followed by the "no relation" row.
    pub fn initial_tables(&self, g: &mut Graph<'_>, num_entities: usize, num_relations: usize) -> Result<(Var, Var)> {
        let v0 = g.param(self.v0);
        let v = g.broadcast_rows(v0, num_entities);
        let r0 = g.param(self.r0);
        let rs = g.broadcast_rows(r0, num_relations);
        let null = g.param(self.r_null);
        let r = g.concat(&[rs, null], 0)?;
        Ok((v, r))
    }

    /// Encodes and processes one batch, returning per-row proposals.
    pub fn propose(
        &self,
        g: &mut Graph<'_>,
        step: usize,
        idx: &BatchIndex,
        v_table: Var,
        r_table: Var,
    ) -> Result<Proposals> {
        let net = self.net(step);
        let d = self.config.dim();
        let h = self.config.heads;
        if idx.positions > self.config.walk_length + 1 {
            return Err(FlockError::Config(format!(
                "walks of {} positions exceed anonymous tables of {}",
                idx.positions,
                self.config.walk_length + 1
            )));
        }
        let mut parts = Vec::with_capacity(7);
        for (table, ids) in [
            (net.anon_node, &idx.anon_node),
            (net.anon_rel, &idx.anon_rel),
            (net.direction, &idx.direction),
            (net.head_flag, &idx.head_flag),
            (net.rel_flag, &idx.rel_flag),
        ] {
            let t = g.param(table);
            parts.push(g.gather_rows(t, ids.clone())?);
        }
        let vp = g.param(net.v_proj);
        let v_proj = g.matmul(v_table, vp)?;
        parts.push(g.gather_rows(v_proj, idx.entity.clone())?);
        let rp = g.param(net.r_proj);
        let r_proj = g.matmul(r_table, rp)?;
        parts.push(g.gather_rows(r_proj, idx.rel_state.clone())?);
        let mut c = parts[0];
        for &p in &parts[1..] {
            c = g.add(c, p)?;
        }
        let x = net.norm.forward(g, c)?;
        let hs = net.gru.forward(g, x, idx.positions, idx.num_walks)?;
        let f = net.ffn.forward(g, hs)?;
        let y = g.add(hs, f)?;
        let out = net.out.forward(g, y)?;
        Ok(Proposals {
            dv: g.slice(out, 1, 0, d)?,
            dr: g.slice(out, 1, d, 2 * d)?,
            a: g.slice(out, 1, 2 * d, 2 * d + h)?,
            b: g.slice(out, 1, 2 * d + h, 2 * d + 2 * h)?,
        })
    }

    /// Pools proposals into per-entity and per-relation updates. The
    /// relation update has a trailing all-zero row for the "no relation"
    /// state.
    pub fn consensus(
        &self,
        g: &mut Graph<'_>,
        props: &Proposals,
        idx: &BatchIndex,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<(Var, Var)> {
        let h = self.config.heads;
        let order = Some(idx.canonical_order.clone());
        let dv = g.grouped_softmax_pool(
            props.dv,
            props.a,
            idx.entity_group.clone(),
            num_entities,
            h,
            order.clone(),
        )?;
        let dr = g.grouped_softmax_pool(props.dr, props.b, idx.rel_group.clone(), num_relations + 1, h, order)?;
        Ok((dv, dr))
    }

    pub fn score(
        &self,
        g: &mut Graph<'_>,
        q: &Query,
        v_table: Var,
        r_table: Var,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Var> {
        let logits = match *q {
            Query::Entity { rel, inverse, .. } => {
                let r = g.gather_rows(r_table, vec![rel].into())?;
                let qd = g.param(self.query_dir);
                let o = g.gather_rows(qd, vec![inverse as usize].into())?;
                let r = g.add(r, o)?;
                let rb = g.broadcast_rows(r, num_entities);
                let z = g.add(v_table, rb)?;
                self.head.forward(g, z)?
            }
            Query::Relation { head, tail } => {
                let hv = g.gather_rows(v_table, vec![head].into())?;
                let tv = g.gather_rows(v_table, vec![tail].into())?;
                let hb = g.broadcast_rows(hv, num_relations);
                let tb = g.broadcast_rows(tv, num_relations);
                let rs = g.slice(r_table, 0, 0, num_relations)?;
                let z = g.concat(&[hb, tb, rs], 1)?;
                self.head.forward(g, z)?
            }
        };
        Ok(g.sigmoid(logits))
    }

    fn check_query(&self, view: &GraphView<'_>, q: &Query) -> Result<()> {
        let kg = view.graph;
        let ok = match *q {
            Query::Entity { head, rel, .. } => {
                self.config.task == Task::Entity && head < kg.num_entities() && rel < kg.num_relations()
            }
            Query::Relation { head, tail } => {
                self.config.task == Task::Relation && head < kg.num_entities() && tail < kg.num_entities()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(contract(format!(
                "query {q:?} does not fit a {} model on this graph",
                self.config.task
            )))
        }
    }

    /// Samples the walk batches the update steps will use.
    pub fn sample_batches(&self, view: &GraphView<'_>, q: &Query, seed: u64) -> Result<Vec<WalkBatch>> {
        let cfg = &self.config;
        let mut out: Vec<WalkBatch> = Vec::with_capacity(cfg.update_steps);
        for i in 0..cfg.update_steps {
            if cfg.reuse_walks && i > 0 {
                out.push(out[0].clone());
                continue;
            }
            let batch_seed = derive(seed, &[tag::WALKS, i as u64]);
            out.push(view.sample_walk_batch(q, cfg.base_walks, cfg.walk_length, batch_seed)?);
        }
        Ok(out)
    }

    /// Runs all update steps on the given walk batches and scores.
    pub fn forward_with_walks(
        &self,
        g: &mut Graph<'_>,
        view: &GraphView<'_>,
        q: &Query,
        batches: &[WalkBatch],
    ) -> Result<ForwardOutput> {
        self.check_query(view, q)?;
        if batches.len() != self.config.update_steps {
            return Err(contract(format!(
                "{} walk batches for {} update steps",
                batches.len(),
                self.config.update_steps
            )));
        }
        let (ne, nr) = (view.graph.num_entities(), view.graph.num_relations());
        let (mut v, mut r) = self.initial_tables(g, ne, nr)?;
        for (i, batch) in batches.iter().enumerate() {
            let idx = BatchIndex::build(batch, q, nr, self.config.scheme)?;
            let props = self.propose(g, i, &idx, v, r)?;
            let (dv, dr) = self.consensus(g, &props, &idx, ne, nr)?;
            v = g.add(v, dv)?;
            r = g.add(r, dr)?;
        }
        let scores = self.score(g, q, v, r, ne, nr)?;
        Ok(ForwardOutput {
            v_table: v,
            r_table: r,
            scores,
        })
    }

    /// One stochastic forward pass; randomness is fully determined by `seed`.
    pub fn forward(&self, g: &mut Graph<'_>, view: &GraphView<'_>, q: &Query, seed: u64) -> Result<ForwardOutput> {
        let batches = self.sample_batches(view, q, seed)?;
        self.forward_with_walks(g, view, q, &batches)
    }

    /// Scores of one forward pass as plain numbers.
    pub fn predict_once(&self, view: &GraphView<'_>, q: &Query, seed: u64) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, view, q, seed)?;
        Ok(g.value(out.scores).data().to_vec())
    }

    /// Mean of `passes` forward passes with independent derived seeds.
    pub fn predict(&self, view: &GraphView<'_>, q: &Query, passes: usize, seed: u64) -> Result<Vec<f64>> {
        if passes == 0 {
            return Err(FlockError::Config("ensemble size must be positive".into()));
        }
        let mut acc: Option<Vec<f64>> = None;
        for p in 0..passes {
            let s = self.predict_once(view, q, derive(seed, &[tag::ENSEMBLE, p as u64]))?;
            match &mut acc {
                None => acc = Some(s),
                Some(a) => a.iter_mut().zip(&s).for_each(|(x, y)| *x += y),
            }
        }
        let mut mean = acc.unwrap_or_default();
        mean.iter_mut().for_each(|x| *x /= passes as f64);
        Ok(mean)
    }

    /// Parameters as a `key = value` block for checkpoints.
    pub fn hyperparameters(&self) -> String {
        crate::config::model_to_text(&self.config)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nn::checkpoint::save(path, &self.hyperparameters(), &self.params, None)
    }

    /// Rebuilds a model from a checkpoint written by [`Self::save`] or the
    /// trainer.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ck = crate::nn::checkpoint::load(path)?;
        let config = crate::config::model_from_text(&ck.hyperparameters)?;
        let mut model = Flock::new(config, 0)?;
        model.params.copy_values_from(&ck.params)?;
        Ok(model)
    }

    /// Sets every parameter to zero (used by tests of the additive structure).
    pub fn zero_all(&mut self) {
        let ids: Vec<ParamId> = self.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let shape = self.params.tensor(id).shape().to_vec();
            *self.params.tensor_mut(id) = Tensor::zeros(&shape);
        }
    }
}
